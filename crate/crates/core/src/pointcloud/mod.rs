//! Point clouds, triangle meshes, and the preprocessing applied before
//! property computation: surface sampling, farthest point sampling,
//! unit-sphere normalization and Gaussian jitter.

mod io;
mod sampling;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, TAG_NOISE};
use crate::vec3::{self, Vec3};

pub use io::{load_off, load_xyz, parse_off, parse_xyz, write_xyz};
pub use sampling::{farthest_point_sample, farthest_point_sample_with_radii, sample_surface};

/// Ordered 3-D points with optional per-point part labels and a class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCloud")]
pub struct PointCloud {
    points: Vec<Vec3>,
    part_labels: Option<Vec<usize>>,
    class_label: Option<usize>,
}

#[derive(Deserialize)]
struct RawCloud {
    points: Vec<Vec3>,
    part_labels: Option<Vec<usize>>,
    class_label: Option<usize>,
}

impl TryFrom<RawCloud> for PointCloud {
    type Error = Error;

    fn try_from(raw: RawCloud) -> Result<Self> {
        let mut cloud = PointCloud::new(raw.points)?;
        if let Some(labels) = raw.part_labels {
            cloud = cloud.with_part_labels(labels)?;
        }
        cloud.class_label = raw.class_label;
        Ok(cloud)
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must not be empty"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            part_labels: None,
            class_label: None,
        })
    }

    pub fn with_part_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} part labels for {} points",
                labels.len(),
                self.points.len()
            )));
        }
        self.part_labels = Some(labels);
        Ok(self)
    }

    pub fn with_class_label(mut self, label: usize) -> Self {
        self.class_label = Some(label);
        self
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn part_labels(&self) -> Option<&[usize]> {
        self.part_labels.as_deref()
    }

    pub fn class_label(&self) -> Option<usize> {
        self.class_label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        vec3::centroid(&self.points)
    }

    /// Same labels, new coordinates.
    pub fn with_points(&self, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::invalid("replacement points change the cloud size"));
        }
        let mut out = PointCloud::new(points)?;
        out.part_labels = self.part_labels.clone();
        out.class_label = self.class_label;
        Ok(out)
    }

    /// Sub-cloud (or reordering) at `indices`, carrying part labels along.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {bad} out of range")));
        }
        let mut out = PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())?;
        out.part_labels = self
            .part_labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        out.class_label = self.class_label;
        Ok(out)
    }
}

/// Centering and isotropic scaling that maps a cloud into the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSphereTransform {
    pub center: Vec3,
    pub scale: f64,
}

impl UnitSphereTransform {
    /// Transform taking `points` to centroid 0 and max norm 1.
    pub fn fit(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot normalize an empty cloud"));
        }
        let center = vec3::centroid(points);
        let radius = points
            .iter()
            .map(|p| vec3::norm(vec3::sub(*p, center)))
            .fold(0.0, f64::max);
        if radius <= 0.0 {
            return Err(Error::invalid("all points identical: zero radius"));
        }
        Ok(Self {
            center,
            scale: 1.0 / radius,
        })
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::scale(vec3::sub(p, self.center), self.scale)
    }
}

pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let t = UnitSphereTransform::fit(cloud.points())?;
    cloud.with_points(cloud.points().iter().map(|p| t.apply(*p)).collect())
}

/// Adds i.i.d. `N(0, sigma²)` noise to every coordinate.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = rng_for(seed, &[TAG_NOISE]);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = *p;
            for c in &mut q {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += sigma * z;
            }
            q
        })
        .collect();
    cloud.with_points(points)
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::invalid(format!(
                    "face {f} references vertex {bad}, mesh has {}",
                    vertices.len()
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
    }

    /// Zero area relative to the face's own edge lengths.
    pub fn is_degenerate(&self, face: usize) -> bool {
        let [a, b, c] = self.triangle(face);
        let longest = [vec3::dist2(a, b), vec3::dist2(b, c), vec3::dist2(c, a)]
            .into_iter()
            .fold(0.0, f64::max);
        self.face_area(face) <= f64::EPSILON * longest
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[Vec3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn invariants_enforced() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(cloud(&[[0.0; 3], [1.0; 3]]).with_part_labels(vec![0]).is_err());
        let json = r#"{"points":[[0,0,0]],"part_labels":[1,2],"class_label":null}"#;
        assert!(serde_json::from_str::<PointCloud>(json).is_err());
    }

    #[test]
    fn normalize_two_points() {
        let out = normalize_unit_sphere(&cloud(&[[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]])).unwrap();
        assert_eq!(out.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_identical_points_fails() {
        assert!(normalize_unit_sphere(&cloud(&[[1.0, 2.0, 3.0]; 4])).is_err());
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let c = cloud(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]).with_class_label(3);
        assert_eq!(add_gaussian_noise(&c, 0.0, 9).unwrap(), c);
        assert!(add_gaussian_noise(&c, -0.1, 9).is_err());
    }

    #[test]
    fn noise_keeps_labels_and_is_deterministic() {
        let c = cloud(&[[0.0; 3]; 5])
            .with_part_labels(vec![0, 1, 0, 1, 2])
            .unwrap()
            .with_class_label(1);
        let a = add_gaussian_noise(&c, 0.01, 5).unwrap();
        let b = add_gaussian_noise(&c, 0.01, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.part_labels(), c.part_labels());
        assert_eq!(a.class_label(), Some(1));
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn mesh_rejects_bad_index() {
        assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        assert!(m.is_degenerate(0));
        assert!(!m.is_degenerate(1));
        assert!((m.face_area(1) - 0.5).abs() < 1e-15);
    }
}
