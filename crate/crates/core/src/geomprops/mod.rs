//! Self-generated geometric labels: neighbourhood covariance, PCA normals,
//! and the two curvature estimates (eigenvalue ratio and normal deviation).
//!
//! The covariance is accumulated from displacements `r = p_i - p_j` between
//! the query point and each of its `k` neighbours, without mean-centring,
//! unless [`Centering::NeighborhoodCentroid`] is requested.

mod eigen;
mod knn;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::vec3::{self, Vec3};

pub use eigen::{canonical_sign, eig_sym3, EigenDecomp3, SymMat3};
pub use knn::{knn, knn_query, knn_rows, KnnGraph};

/// Neighbourhoods whose eigenvalue sum falls at or below this are degenerate.
pub const DEGENERATE_TRACE: f64 = 1e-12;
/// Normal reported for degenerate neighbourhoods.
pub const FALLBACK_NORMAL: Vec3 = [0.0, 0.0, 1.0];
pub const DEFAULT_K: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Flip so that `n · (p - centroid) >= 0`.
    #[default]
    Outward,
    /// Keep the sign-canonical eigenvector.
    Canonical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// `Σ (p_i - p_j)(p_i - p_j)ᵀ` over the neighbours of `i`.
    #[default]
    QueryPoint,
    /// Ordinary PCA: deviations from the mean of `{p_i} ∪ neighbours`.
    NeighborhoodCentroid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureKind {
    /// `λ_min / Σλ`, in `[0, 1/3]`.
    #[default]
    EigenRatio,
    /// Mean `‖n_i - n_j‖` over sign-aligned neighbour normals, in `[0, √2]`.
    NormalDeviation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropsConfig {
    pub k: usize,
    pub curvature: CurvatureKind,
    pub orientation: Orientation,
    pub centering: Centering,
}

impl Default for PropsConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            curvature: CurvatureKind::EigenRatio,
            orientation: Orientation::Outward,
            centering: Centering::QueryPoint,
        }
    }
}

/// Per-point normal `n` and curvature `u`, with a degeneracy flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<PointProps>", try_from = "Vec<PointProps>")]
pub struct GeomProps {
    pub normals: Vec<Vec3>,
    pub curvature: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Serialized per-point record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointProps {
    pub normal: Vec3,
    pub curvature: f64,
    pub degenerate: bool,
}

impl From<GeomProps> for Vec<PointProps> {
    fn from(g: GeomProps) -> Self {
        (0..g.len()).map(|i| g.point(i)).collect()
    }
}

impl TryFrom<Vec<PointProps>> for GeomProps {
    type Error = Error;

    fn try_from(v: Vec<PointProps>) -> Result<Self> {
        let mut g = GeomProps::with_capacity(v.len());
        for p in v {
            if !(p.curvature.is_finite() && p.normal.iter().all(|c| c.is_finite())) {
                return Err(Error::invalid("non-finite geometric property"));
            }
            g.push(p);
        }
        Ok(g)
    }
}

impl GeomProps {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            normals: Vec::with_capacity(n),
            curvature: Vec::with_capacity(n),
            degenerate: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, p: PointProps) {
        self.normals.push(p.normal);
        self.curvature.push(p.curvature);
        self.degenerate.push(p.degenerate);
    }

    pub fn point(&self, i: usize) -> PointProps {
        PointProps {
            normal: self.normals[i],
            curvature: self.curvature[i],
            degenerate: self.degenerate[i],
        }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Regression target `(nx, ny, nz, u)` per point, row-major.
    pub fn targets(&self) -> Vec<f64> {
        self.normals
            .iter()
            .zip(&self.curvature)
            .flat_map(|(n, u)| [n[0], n[1], n[2], *u])
            .collect()
    }

    /// `true` where the point takes part in regression losses.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.degenerate.iter().map(|d| !d).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = GeomProps::with_capacity(indices.len());
        for &i in indices {
            out.push(self.point(i));
        }
        out
    }

    /// `index,nx,ny,nz,u,degenerate` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,nx,ny,nz,u,degenerate\n");
        for i in 0..self.len() {
            let n = self.normals[i];
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                n[0], n[1], n[2], self.curvature[i], self.degenerate[i]
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(Error::io(path))
    }
}

fn check_index(points: &[Vec3], graph: &KnnGraph, i: usize) -> Result<()> {
    if i >= points.len() || i >= graph.len() {
        return Err(Error::invalid(format!("point index {i} out of range")));
    }
    Ok(())
}

fn covariance_with(points: &[Vec3], graph: &KnnGraph, i: usize, centering: Centering) -> SymMat3 {
    let nb = graph.neighbors(i);
    let center = match centering {
        Centering::QueryPoint => points[i],
        Centering::NeighborhoodCentroid => {
            let sum = nb.iter().fold(points[i], |acc, &j| vec3::add(acc, points[j]));
            vec3::scale(sum, 1.0 / (nb.len() + 1) as f64)
        }
    };
    let mut c = SymMat3::ZERO;
    if centering == Centering::NeighborhoodCentroid {
        c.add_outer(vec3::sub(points[i], center));
    }
    for &j in nb {
        c.add_outer(vec3::sub(center, points[j]));
    }
    c
}

/// `C = Σ_j r_j r_jᵀ` with `r_j = p_i - p_j` over the neighbours of `i`.
pub fn covariance_at(points: &[Vec3], graph: &KnnGraph, i: usize) -> Result<SymMat3> {
    check_index(points, graph, i)?;
    Ok(covariance_with(points, graph, i, Centering::QueryPoint))
}

/// Eigenvalue ratio `λ_min / Σλ`, clamped into `[0, 1/3]`; `None` when the
/// neighbourhood is degenerate.
fn eigen_ratio(e: &EigenDecomp3) -> Option<f64> {
    let total: f64 = e.values.iter().sum();
    if total <= DEGENERATE_TRACE {
        return None;
    }
    Some((e.values[0].max(0.0) / total).clamp(0.0, 1.0 / 3.0))
}

/// Change-of-curvature estimate `λ_min / Σλ` at point `i` (0 when degenerate).
pub fn curvature_eigen(points: &[Vec3], graph: &KnnGraph, i: usize) -> Result<f64> {
    let c = covariance_at(points, graph, i)?;
    Ok(eigen_ratio(&eig_sym3(&c)).unwrap_or(0.0))
}

/// Mean distance between `n_i` and its neighbours' normals, each neighbour
/// normal flipped first if it points away from `n_i`.
pub fn curvature_normal_dev(normals: &[Vec3], graph: &KnnGraph, i: usize) -> Result<f64> {
    check_index(normals, graph, i)?;
    let ni = normals[i];
    let nb = graph.neighbors(i);
    if let Some(&bad) = nb.iter().find(|&&j| j >= normals.len()) {
        return Err(Error::invalid(format!("no normal for neighbour {bad}")));
    }
    let total: f64 = nb
        .iter()
        .map(|&j| {
            let nj = normals[j];
            let nj = if vec3::dot(ni, nj) < 0.0 { vec3::scale(nj, -1.0) } else { nj };
            vec3::norm(vec3::sub(ni, nj))
        })
        .sum();
    Ok(total / nb.len() as f64)
}

/// PCA normals and their degeneracy flags.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<bool>,
    /// Eigenvalue-ratio curvature, computed alongside at no extra cost.
    pub eigen_curvature: Vec<f64>,
}

/// Normals from a prebuilt graph.
pub fn normals_from_graph(
    points: &[Vec3],
    graph: &KnnGraph,
    orientation: Orientation,
    centering: Centering,
) -> NormalEstimate {
    let centroid = vec3::centroid(points);
    let n = points.len();
    let mut out = NormalEstimate {
        normals: Vec::with_capacity(n),
        degenerate: Vec::with_capacity(n),
        eigen_curvature: Vec::with_capacity(n),
    };
    for i in 0..n {
        let e = eig_sym3(&covariance_with(points, graph, i, centering));
        match eigen_ratio(&e) {
            None => {
                out.normals.push(FALLBACK_NORMAL);
                out.degenerate.push(true);
                out.eigen_curvature.push(0.0);
            }
            Some(u) => {
                let mut normal = e.vectors[0];
                if orientation == Orientation::Outward
                    && vec3::dot(normal, vec3::sub(points[i], centroid)) < 0.0
                {
                    normal = vec3::scale(normal, -1.0);
                }
                out.normals.push(normal);
                out.degenerate.push(false);
                out.eigen_curvature.push(u);
            }
        }
    }
    out
}

/// Minimal-eigenvalue eigenvector of each point's neighbourhood covariance.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    orientation: Orientation,
) -> Result<NormalEstimate> {
    let graph = knn(cloud.points(), k, false)?;
    Ok(normals_from_graph(
        cloud.points(),
        &graph,
        orientation,
        Centering::QueryPoint,
    ))
}

/// Normals plus the selected curvature for every point.
pub fn compute_props(cloud: &PointCloud, k: usize, curvature: CurvatureKind) -> Result<GeomProps> {
    compute_props_with(
        cloud,
        &PropsConfig {
            k,
            curvature,
            ..PropsConfig::default()
        },
    )
}

pub fn compute_props_with(cloud: &PointCloud, cfg: &PropsConfig) -> Result<GeomProps> {
    let points = cloud.points();
    let graph = knn(points, cfg.k, false)?;
    let est = normals_from_graph(points, &graph, cfg.orientation, cfg.centering);
    let curvature = match cfg.curvature {
        CurvatureKind::EigenRatio => est.eigen_curvature,
        CurvatureKind::NormalDeviation => (0..points.len())
            .map(|i| curvature_normal_dev(&est.normals, &graph, i))
            .collect::<Result<_>>()?,
    };
    Ok(GeomProps {
        normals: est.normals,
        curvature,
        degenerate: est.degenerate,
    })
}

/// Copies to every sparse point the properties of its nearest dense point
/// (ties to the smaller index). Both clouds must share a frame.
pub fn transfer_privileged(
    dense: &[Vec3],
    dense_props: &GeomProps,
    sparse: &[Vec3],
) -> Result<GeomProps> {
    if dense.is_empty() {
        return Err(Error::invalid("dense cloud is empty"));
    }
    if dense_props.len() != dense.len() {
        return Err(Error::invalid(format!(
            "{} dense properties for {} dense points",
            dense_props.len(),
            dense.len()
        )));
    }
    let nearest = knn_query(sparse, dense, 1)?;
    Ok(dense_props.select(nearest.flat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, z: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([i as f64 * 0.1, j as f64 * 0.1, z]);
            }
        }
        pts
    }

    #[test]
    fn two_term_covariance() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let g = KnnGraph::from_rows(2, vec![1, 2, 0, 2, 0, 1]).unwrap();
        assert_eq!(covariance_at(&pts, &g, 0).unwrap(), SymMat3::diagonal([2.0, 0.0, 0.0]));
    }

    #[test]
    fn coincident_neighbours_give_zero_and_flag() {
        let cloud = PointCloud::new(vec![[0.3, 0.3, 0.3]; 6]).unwrap();
        let g = knn(cloud.points(), 3, false).unwrap();
        assert_eq!(covariance_at(cloud.points(), &g, 0).unwrap(), SymMat3::ZERO);
        let est = estimate_normals(&cloud, 3, Orientation::Outward).unwrap();
        assert!(est.degenerate.iter().all(|&d| d));
        assert!(est.normals.iter().all(|n| *n == FALLBACK_NORMAL));
        assert_eq!(curvature_eigen(cloud.points(), &g, 0).unwrap(), 0.0);
    }

    #[test]
    fn plane_normals_and_zero_curvature() {
        // Offset plane so the outward rule has a well-defined side.
        let mut pts = grid(8, 0.0);
        pts.push([0.35, 0.35, -5.0]);
        let cloud = PointCloud::new(pts).unwrap();
        let props = compute_props(&cloud, 8, CurvatureKind::EigenRatio).unwrap();
        for i in 0..64 {
            assert_eq!(props.normals[i], [0.0, 0.0, 1.0], "point {i}");
        }
        let flat = PointCloud::new(grid(6, 0.25)).unwrap();
        let props = compute_props(&flat, 8, CurvatureKind::EigenRatio).unwrap();
        assert!(props.curvature.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn isotropic_neighbourhood_is_one_third() {
        let pts = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let g = knn(&pts, 6, false).unwrap();
        let u = curvature_eigen(&pts, &g, 0).unwrap();
        assert!((u - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn normal_deviation_cases() {
        let g = KnnGraph::from_rows(2, vec![1, 2, 0, 2, 0, 1]).unwrap();
        let same = [[0.0, 0.0, 1.0]; 3];
        assert_eq!(curvature_normal_dev(&same, &g, 0).unwrap(), 0.0);
        let perp = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let u = curvature_normal_dev(&perp, &g, 0).unwrap();
        assert!((u - 2f64.sqrt()).abs() < 1e-15);
        // an antipodal neighbour is aligned before differencing
        let flipped = [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 0.0, 1.0]];
        assert_eq!(curvature_normal_dev(&flipped, &g, 0).unwrap(), 0.0);
    }

    #[test]
    fn transfer_copies_nearest() {
        let dense = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let props = GeomProps {
            normals: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            curvature: vec![0.1, 0.2, 0.3],
            degenerate: vec![false, true, false],
        };
        let sparse = [[0.9, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let out = transfer_privileged(&dense, &props, &sparse).unwrap();
        assert_eq!(out, props.select(&[1, 2]));
        assert_eq!(transfer_privileged(&dense, &props, &dense).unwrap(), props);
        let empty = GeomProps::with_capacity(0);
        assert!(transfer_privileged(&[], &empty, &sparse).is_err());
    }

    #[test]
    fn props_json_and_csv() {
        let props = GeomProps {
            normals: vec![[0.0, 0.0, 1.0]],
            curvature: vec![0.125],
            degenerate: vec![false],
        };
        let json = serde_json::to_string(&props).unwrap();
        assert_eq!(json, r#"[{"normal":[0.0,0.0,1.0],"curvature":0.125,"degenerate":false}]"#);
        assert_eq!(serde_json::from_str::<GeomProps>(&json).unwrap(), props);
        assert_eq!(props.to_csv(), "index,nx,ny,nz,u,degenerate\n0,0,0,1,0.125,false\n");
    }
}
