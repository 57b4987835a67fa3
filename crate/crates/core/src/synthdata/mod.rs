//! Procedural shape datasets with analytic geometric ground truth.
//!
//! Each cloud carries two label sets: self-computed properties of the noisy
//! sparse cloud (the self-supervised labels) and exact surface normals with a
//! dense-sample curvature (the privileged labels).

mod shapes;

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geomprops::{self, compute_props, eig_sym3, knn, knn_query, CurvatureKind, GeomProps, SymMat3};
use crate::pointcloud::{add_gaussian_noise, farthest_point_sample, PointCloud, UnitSphereTransform};
use crate::rng::{derive_seed, rng_for, TAG_DENSE, TAG_JITTER, TAG_SHAPE, TAG_TEST, TAG_TRAIN};
use crate::vec3::{self, Vec3};

pub use shapes::{ShapeClass, Surface, SurfacePoint};

pub const DATASET_FORMAT: &str = "geoaux-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const GENERATOR: &str = "geoaux-synth/1";
pub const MIN_POINTS: usize = 64;
const OVERSAMPLE: usize = 4;

/// Everything needed to generate one cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub surface: Surface,
    pub points: usize,
    /// Size of the uniform dense sample behind the privileged curvature.
    pub dense_points: usize,
    pub jitter: f64,
    /// Neighbourhood size of the sparse cloud; the dense estimate scales it
    /// by `dense_points / points` to cover the same patch.
    pub k: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        if self.points < MIN_POINTS {
            return Err(Error::invalid(format!(
                "{} points per cloud, need at least {MIN_POINTS}",
                self.points
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::invalid(format!("jitter {} must be finite and >= 0", self.jitter)));
        }
        if self.k == 0 || self.k >= self.points || self.dense_points < self.points {
            return Err(Error::invalid(format!(
                "k = {} with {} points and {} dense points",
                self.k, self.points, self.dense_points
            )));
        }
        Ok(())
    }

    fn dense_k(&self) -> usize {
        (self.k * self.dense_points / self.points).clamp(self.k, self.dense_points)
    }
}

/// Output of [`gen_shape`], in the unit-sphere frame of the clean samples.
#[derive(Clone, Debug)]
pub struct GeneratedShape {
    /// Normalized surface samples before jitter, with part labels.
    pub clean: PointCloud,
    /// `clean` plus Gaussian jitter.
    pub cloud: PointCloud,
    /// Exact normals and dense-sample curvature at the clean samples.
    pub analytic: GeomProps,
    pub dense: Vec<Vec3>,
    pub dense_normals: Vec<Vec3>,
    pub transform: UnitSphereTransform,
}

/// `count` area-uniform candidates thinned to `n` by farthest point sampling.
pub fn sample_shape(surface: &Surface, n: usize, seed: u64) -> Result<Vec<SurfacePoint>> {
    surface.validate()?;
    let mut rng = rng_for(seed, &[TAG_SHAPE]);
    let candidates: Vec<SurfacePoint> = (0..n * OVERSAMPLE).map(|_| surface.sample(&mut rng)).collect();
    let pts: Vec<Vec3> = candidates.iter().map(|c| c.point).collect();
    let keep = farthest_point_sample(&pts, n, 0)?;
    Ok(keep.into_iter().map(|i| candidates[i]).collect())
}

/// Eigenvalue-ratio curvature at each query, from its `k` nearest points in
/// `reference`.
fn dense_curvature(queries: &[Vec3], reference: &[Vec3], k: usize) -> Result<Vec<f64>> {
    let graph = knn_query(queries, reference, k)?;
    Ok(queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut c = SymMat3::ZERO;
            for &j in graph.neighbors(i) {
                c.add_outer(vec3::sub(*q, reference[j]));
            }
            let e = eig_sym3(&c);
            let total: f64 = e.values.iter().sum();
            if total <= geomprops::DEGENERATE_TRACE {
                0.0
            } else {
                (e.values[0].max(0.0) / total).clamp(0.0, 1.0 / 3.0)
            }
        })
        .collect())
}

pub fn gen_shape(spec: &ShapeSpec) -> Result<GeneratedShape> {
    spec.validate()?;
    let sparse = sample_shape(&spec.surface, spec.points, spec.seed)?;
    let mut rng = rng_for(spec.seed, &[TAG_DENSE]);
    let dense_raw: Vec<SurfacePoint> = (0..spec.dense_points).map(|_| spec.surface.sample(&mut rng)).collect();

    let raw: Vec<Vec3> = sparse.iter().map(|s| s.point).collect();
    let dense_pts: Vec<Vec3> = dense_raw.iter().map(|s| s.point).collect();
    let curvature = dense_curvature(&raw, &dense_pts, spec.dense_k())?;

    let raw_cloud = PointCloud::new(raw)?;
    let transform = UnitSphereTransform::fit(raw_cloud.points())?;
    let clean = raw_cloud
        .with_points(raw_cloud.points().iter().map(|p| transform.apply(*p)).collect())?
        .with_part_labels(sparse.iter().map(|s| s.part).collect())?;
    let cloud = add_gaussian_noise(&clean, spec.jitter, derive_seed(spec.seed, &[TAG_JITTER]))?;
    let n = sparse.len();
    Ok(GeneratedShape {
        clean,
        cloud,
        analytic: GeomProps {
            normals: sparse.iter().map(|s| s.normal).collect(),
            curvature,
            degenerate: vec![false; n],
        },
        dense: dense_pts.iter().map(|p| transform.apply(*p)).collect(),
        dense_normals: dense_raw.iter().map(|s| s.normal).collect(),
        transform,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub dense_points: usize,
    pub jitter: f64,
    pub k: usize,
    pub seed: u64,
    /// Also store privileged labels copied from the nearest dense sample.
    pub transfer_dense: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            train_per_class: 40,
            test_per_class: 20,
            points: 256,
            dense_points: 4096,
            jitter: 0.005,
            k: geomprops::DEFAULT_K,
            seed: 0,
            transfer_dense: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        let mut sorted = self.classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.classes.len() {
            return Err(Error::invalid("dataset classes repeat"));
        }
        if self.train_per_class == 0 {
            return Err(Error::invalid("train split would be empty"));
        }
        Ok(())
    }

    pub fn layout(&self) -> LabelLayout {
        LabelLayout {
            classes: self.classes.clone(),
        }
    }
}

/// Class indices and the global numbering of parts across classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLayout {
    pub classes: Vec<ShapeClass>,
}

impl LabelLayout {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_parts(&self) -> usize {
        self.classes.iter().map(|c| c.part_count()).sum()
    }

    /// Global part ids belonging to class index `label`.
    pub fn parts_of(&self, label: usize) -> Range<usize> {
        let start: usize = self.classes[..label].iter().map(|c| c.part_count()).sum();
        start..start + self.classes[label].part_count()
    }
}

/// One stored cloud with both label sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudRecord {
    pub class_label: usize,
    pub class_name: String,
    pub seed: u64,
    pub surface: Surface,
    pub points: Vec<Vec3>,
    /// Global part ids (see [`LabelLayout::parts_of`]).
    pub part_labels: Vec<usize>,
    pub geossl: GeomProps,
    pub geopl: GeomProps,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geopl_transferred: Option<GeomProps>,
}

impl CloudRecord {
    pub fn cloud(&self) -> Result<PointCloud> {
        Ok(PointCloud::new(self.points.clone())?
            .with_part_labels(self.part_labels.clone())?
            .with_class_label(self.class_label))
    }

    fn validate(&self, layout: &LabelLayout) -> Result<()> {
        let n = self.points.len();
        if self.class_label >= layout.num_classes() {
            return Err(Error::invalid(format!("class label {} out of range", self.class_label)));
        }
        let parts = layout.parts_of(self.class_label);
        if self.part_labels.iter().any(|p| !parts.contains(p)) {
            return Err(Error::invalid("part label outside its class"));
        }
        let lens = [
            self.part_labels.len(),
            self.geossl.len(),
            self.geopl.len(),
            self.geopl_transferred.as_ref().map_or(n, |g| g.len()),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::invalid("per-point arrays disagree in length"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub split: String,
    pub spec: DatasetSpec,
    pub clouds: Vec<CloudRecord>,
}

impl Split {
    pub fn layout(&self) -> LabelLayout {
        self.spec.layout()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != DATASET_FORMAT || self.version != DATASET_VERSION {
            return Err(Error::invalid(format!(
                "unsupported dataset format {} v{}",
                self.format, self.version
            )));
        }
        let layout = self.layout();
        self.clouds.iter().try_for_each(|c| c.validate(&layout))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
}

fn make_record(spec: &DatasetSpec, class_label: usize, seed: u64) -> Result<CloudRecord> {
    let class = spec.classes[class_label];
    let surface = Surface::random(class, &mut rng_for(seed, &[TAG_SHAPE, 1]));
    let shape_spec = ShapeSpec {
        surface,
        points: spec.points,
        dense_points: spec.dense_points,
        jitter: spec.jitter,
        k: spec.k,
        seed,
    };
    let shape = gen_shape(&shape_spec)?;
    let offset = spec.layout().parts_of(class_label).start;
    let geossl = compute_props(&shape.cloud, spec.k, CurvatureKind::EigenRatio)?;
    let geopl_transferred = if spec.transfer_dense {
        let k = shape_spec.dense_k().min(spec.dense_points - 1);
        let graph = knn(&shape.dense, k, false)?;
        let curvature = (0..shape.dense.len())
            .map(|i| geomprops::curvature_eigen(&shape.dense, &graph, i))
            .collect::<Result<Vec<_>>>()?;
        let dense_props = GeomProps {
            normals: shape.dense_normals.clone(),
            curvature,
            degenerate: vec![false; shape.dense.len()],
        };
        Some(geomprops::transfer_privileged(&shape.dense, &dense_props, shape.cloud.points())?)
    } else {
        None
    };
    Ok(CloudRecord {
        class_label,
        class_name: class.name().to_string(),
        seed,
        surface,
        points: shape.cloud.points().to_vec(),
        part_labels: shape
            .clean
            .part_labels()
            .unwrap_or_default()
            .iter()
            .map(|p| p + offset)
            .collect(),
        geossl,
        geopl: shape.analytic,
        geopl_transferred,
    })
}

fn gen_split(spec: &DatasetSpec, tag: u64, per_class: usize, name: &str) -> Result<Split> {
    let mut clouds = Vec::with_capacity(per_class * spec.classes.len());
    for class_label in 0..spec.classes.len() {
        for i in 0..per_class {
            let seed = derive_seed(spec.seed, &[tag, class_label as u64, i as u64]);
            clouds.push(make_record(spec, class_label, seed)?);
        }
    }
    Ok(Split {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        generator: GENERATOR.to_string(),
        split: name.to_string(),
        spec: spec.clone(),
        clouds,
    })
}

/// Balanced train and test splits from disjoint seed streams.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        train: gen_split(spec, TAG_TRAIN, spec.train_per_class, "train")?,
        test: gen_split(spec, TAG_TEST, spec.test_per_class, "test")?,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of every file written for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub spec: DatasetSpec,
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `train.json`, `test.json` and `manifest.json` under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut files = BTreeMap::new();
    for split in [&dataset.train, &dataset.test] {
        let name = format!("{}.json", split.split);
        let path = dir.join(&name);
        let bytes = serde_json::to_vec(split).map_err(Error::json(&path))?;
        fs::write(&path, &bytes).map_err(Error::io(&path))?;
        files.insert(name, sha256_hex(&bytes));
    }
    let manifest = DatasetManifest {
        format: format!("{DATASET_FORMAT}-manifest"),
        version: DATASET_VERSION,
        generator: GENERATOR.to_string(),
        spec: dataset.train.spec.clone(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(Error::json(&path))?;
    fs::write(&path, bytes).map_err(Error::io(&path))?;
    Ok(manifest)
}

pub fn load_split(path: &Path) -> Result<Split> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let split: Split = serde_json::from_slice(&bytes).map_err(Error::json(path))?;
    split.validate()?;
    Ok(split)
}

/// Loads both splits, checking them against the manifest hashes.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&manifest_path).map_err(Error::io(&manifest_path))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(Error::json(&manifest_path))?;
    let load = |name: &str| -> Result<Split> {
        let path: PathBuf = dir.join(format!("{name}.json"));
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        if manifest.files.get(&format!("{name}.json")) != Some(&sha256_hex(&bytes)) {
            return Err(Error::invalid(format!("{} does not match its manifest hash", path.display())));
        }
        let split: Split = serde_json::from_slice(&bytes).map_err(Error::json(&path))?;
        split.validate()?;
        Ok(split)
    };
    Ok(Dataset {
        train: load("train")?,
        test: load("test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            train_per_class: 2,
            test_per_class: 1,
            points: 64,
            dense_points: 512,
            k: 10,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn layout_numbers_parts_globally() {
        let layout = DatasetSpec::default().layout();
        assert_eq!(layout.num_parts(), 12);
        assert_eq!(layout.parts_of(0), 0..2);
        assert_eq!(layout.parts_of(1), 2..5);
        assert_eq!(layout.parts_of(4), 10..12);
    }

    #[test]
    fn unit_sphere_sample_has_radial_normals() {
        let pts = sample_shape(&Surface::Sphere { radius: 1.0 }, 128, 4).unwrap();
        for p in &pts {
            assert!((vec3::norm(p.point) - 1.0).abs() < 1e-12);
            assert_eq!(p.point, p.normal);
        }
    }

    #[test]
    fn cube_face_interiors_have_zero_dense_curvature() {
        let spec = ShapeSpec {
            surface: Surface::Cube { half: [1.0; 3] },
            points: 256,
            dense_points: 4096,
            jitter: 0.0,
            k: 10,
            seed: 2,
        };
        let shape = gen_shape(&spec).unwrap();
        let mut interior = 0;
        for (i, p) in shape.clean.points().iter().enumerate() {
            let raw = vec3::add(vec3::scale(*p, 1.0 / shape.transform.scale), shape.transform.center);
            let axis = shape.clean.part_labels().unwrap()[i];
            let others = (0..3).filter(|&d| d != axis);
            // far enough from every edge that the dense patch stays on the face
            if others.map(|d| raw[d].abs()).fold(0.0, f64::max) < 0.3 {
                interior += 1;
                assert_eq!(shape.analytic.curvature[i], 0.0);
            }
        }
        assert!(interior > 0);
    }

    #[test]
    fn counts_balance_and_disjoint_seeds() {
        let d = gen_dataset(&small_spec()).unwrap();
        assert_eq!(d.train.clouds.len(), 10);
        assert_eq!(d.test.clouds.len(), 5);
        for c in 0..5 {
            assert_eq!(d.train.clouds.iter().filter(|r| r.class_label == c).count(), 2);
        }
        let train: Vec<u64> = d.train.clouds.iter().map(|c| c.seed).collect();
        assert!(d.test.clouds.iter().all(|c| !train.contains(&c.seed)));
    }

    #[test]
    fn privileged_normals_beat_self_computed_on_spheres() {
        let spec = DatasetSpec {
            classes: vec![ShapeClass::Sphere],
            ..small_spec()
        };
        for rec in gen_dataset(&spec).unwrap().train.clouds {
            let err = |g: &GeomProps| -> f64 {
                g.normals
                    .iter()
                    .zip(&rec.geopl.normals)
                    .map(|(a, b)| vec3::angle_deg(*a, *b))
                    .sum::<f64>()
                    / g.len() as f64
            };
            assert_eq!(err(&rec.geopl), 0.0);
            assert!(err(&rec.geossl) > 0.0);
        }
    }

    #[test]
    fn files_are_reproducible_and_verified() {
        let spec = DatasetSpec {
            transfer_dense: true,
            ..small_spec()
        };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let m1 = write_dataset(&gen_dataset(&spec).unwrap(), &a).unwrap();
        let m2 = write_dataset(&gen_dataset(&spec).unwrap(), &b).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(fs::read(a.join("train.json")).unwrap(), fs::read(b.join("train.json")).unwrap());
        let loaded = load_dataset(&a).unwrap();
        assert!(loaded.train.clouds.iter().all(|c| c.geopl_transferred.is_some()));
        fs::write(a.join("test.json"), b"{}").unwrap();
        assert!(load_dataset(&a).is_err());
    }
}
