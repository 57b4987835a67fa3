//! Parameter bundles of the commands. Each is fully defaulted, so a config
//! file or `--set` override only names what it changes, and the resolved
//! value is what lands in the run manifest.

use std::path::PathBuf;

use geoaux::geomprops::PropsConfig;
use geoaux::model::{ModelConfig, Supervision, TrainConfig};
use geoaux::synthdata::DatasetSpec;
use serde::{Deserialize, Serialize};

/// Default seed list of the multi-seed experiments.
pub fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Where a command gets its data: generated from `dataset`, or loaded from
/// `dataset_dir` (written by `gen`) when that is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub dataset: DatasetSpec,
    pub dataset_dir: Option<PathBuf>,
}

/// Small regime where the variants of the trend checks still separate.
/// On the standard dataset every variant reaches 100% test accuracy.
pub fn trend_data() -> DataSource {
    DataSource {
        dataset: DatasetSpec {
            train_per_class: 10,
            test_per_class: 40,
            points: 128,
            ..DatasetSpec::default()
        },
        dataset_dir: None,
    }
}

pub fn trend_train() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        decay_period: 10,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub dataset: DatasetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropsSpec {
    /// `.off` mesh (sampled first) or `.xyz` point list.
    pub input: PathBuf,
    pub sample_points: usize,
    pub sample_seed: u64,
    /// Scale the cloud into the unit sphere before computing.
    pub normalize: bool,
    pub props: PropsConfig,
}

impl Default for PropsSpec {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            sample_points: 2048,
            sample_seed: 0,
            normalize: false,
            props: PropsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    #[default]
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    pub checkpoint: PathBuf,
    pub split: SplitName,
    /// Gaussian noise added to every point before evaluation.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Label source of the as-supervision cells.
    pub supervision: Supervision,
    pub seeds: Vec<u64>,
}

impl Default for AblateSpec {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            supervision: Supervision::Geossl,
            seeds: default_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            lambdas: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            seeds: default_seeds(),
        }
    }
}

/// Reference normals the noise experiment scores against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalReference {
    /// Exact surface normals.
    #[default]
    Analytic,
    /// Normals estimated on the clean cloud with the same settings as the
    /// noisy estimate, so that σ = 0 gives zero distance exactly.
    Clean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    /// Training of the normal-regression network, from scratch on the clean
    /// training split.
    pub train: TrainConfig,
    pub sigmas: Vec<f64>,
    pub noise_seed: u64,
    pub seeds: Vec<u64>,
    /// Normal estimation applied to the noisy clouds.
    pub pca: PropsConfig,
    pub reference: NormalReference,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sigmas: vec![0.0, 0.01],
            noise_seed: 0,
            seeds: default_seeds(),
            pca: PropsConfig::default(),
            reference: NormalReference::Analytic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    /// Training of the two backbones (classification only, and GeoSSL).
    pub backbone: TrainConfig,
    /// Training of the normal-regression probe.
    pub probe: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            model: ModelConfig::default(),
            backbone: TrainConfig::default(),
            probe: TrainConfig::default(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendSpec {
    pub data: DataSource,
    pub model: ModelConfig,
    /// Shared by every classifier; `lambda` is the GeoSSL and GeoPL weight.
    pub train: TrainConfig,
    /// λ of the heavily weighted GeoSSL variant.
    pub heavy_lambda: f64,
    /// Normal-regression probes, scratch and frozen.
    pub probe: TrainConfig,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub pca: PropsConfig,
    pub seeds: Vec<u64>,
}

impl Default for TrendSpec {
    fn default() -> Self {
        Self {
            data: trend_data(),
            model: ModelConfig::default(),
            train: trend_train(),
            heavy_lambda: 1.0,
            probe: trend_train(),
            noise_sigma: 0.01,
            noise_seed: 0,
            pca: PropsConfig::default(),
            seeds: (0..10).collect(),
        }
    }
}
