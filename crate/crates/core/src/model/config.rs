use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classification,
    Segmentation,
}

/// Which shared tensor feeds the regression head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegInput {
    /// Per-point embedding after the shared MLP.
    #[default]
    Embedding,
    /// Concatenated edge-convolution outputs, before the shared MLP.
    EdgeFeatures,
}

/// Self-computed properties appended to the xyz input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputProps {
    pub normals: bool,
    pub curvature: bool,
}

impl InputProps {
    pub fn dim(&self) -> usize {
        3 + 3 * usize::from(self.normals) + usize::from(self.curvature)
    }
}

/// Network shape. Head lists hold hidden widths; the output layer (classes,
/// parts, or 4 geometric values) is appended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub task: Task,
    pub k_graph: usize,
    pub edge_channels: Vec<usize>,
    pub embed_dim: usize,
    pub cls_head: Vec<usize>,
    pub seg_head: Vec<usize>,
    pub reg_head: Vec<usize>,
    pub num_classes: usize,
    pub num_parts: usize,
    /// Rebuild the kNN graph in feature space before every edge layer after
    /// the first.
    pub dynamic_graph: bool,
    pub reg_input: RegInput,
    pub input: InputProps,
}

pub const GEOM_DIM: usize = 4;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification,
            k_graph: 20,
            edge_channels: vec![32, 32, 64],
            embed_dim: 128,
            cls_head: vec![64, 32],
            seg_head: vec![64, 32],
            reg_head: vec![64, 32],
            num_classes: 5,
            num_parts: 12,
            dynamic_graph: true,
            reg_input: RegInput::Embedding,
            input: InputProps::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self
            .edge_channels
            .iter()
            .chain(&self.cls_head)
            .chain(&self.seg_head)
            .chain(&self.reg_head)
            .chain([&self.embed_dim]);
        if self.edge_channels.is_empty() || widths.into_iter().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive and edge layers non-empty"));
        }
        if self.k_graph == 0 {
            return Err(Error::invalid("k_graph must be positive"));
        }
        let outputs = match self.task {
            Task::Classification => self.num_classes,
            Task::Segmentation => self.num_parts,
        };
        if outputs == 0 {
            return Err(Error::invalid("task head needs at least one output"));
        }
        Ok(())
    }

    pub fn task_outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.num_classes,
            Task::Segmentation => self.num_parts,
        }
    }

    pub fn edge_total(&self) -> usize {
        self.edge_channels.iter().sum()
    }

    /// `(prefix, input width, widths including output)` for every dense
    /// stack in the network.
    pub(crate) fn head_layouts(&self) -> [(&'static str, usize, Vec<usize>); 2] {
        let (task_in, hidden) = match self.task {
            Task::Classification => (self.embed_dim, &self.cls_head),
            Task::Segmentation => (2 * self.embed_dim, &self.seg_head),
        };
        let mut task = hidden.clone();
        task.push(self.task_outputs());
        let reg_in = match self.reg_input {
            RegInput::Embedding => self.embed_dim,
            RegInput::EdgeFeatures => self.edge_total(),
        };
        let mut reg = self.reg_head.clone();
        reg.push(GEOM_DIM);
        [("task", task_in, task), ("reg", reg_in, reg)]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Labels computed from the training cloud itself.
    #[default]
    Geossl,
    /// Labels from the privileged source.
    Geopl,
    /// No geometric branch in the loss.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoplSource {
    /// Exact surface normals with dense-sample curvature.
    #[default]
    Analytic,
    /// Copied from the nearest point of the dense sample.
    Transferred,
}

/// Which components of `g = (n, u)` enter the regression loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegTargets {
    pub normals: bool,
    pub curvature: bool,
}

impl Default for RegTargets {
    fn default() -> Self {
        Self {
            normals: true,
            curvature: true,
        }
    }
}

impl RegTargets {
    pub(crate) fn columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        if self.normals {
            cols.extend([0, 1, 2]);
        }
        if self.curvature {
            cols.push(3);
        }
        cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the regression loss.
    pub lambda: f64,
    pub base_lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub decay_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub supervision: Supervision,
    pub geopl_source: GeoplSource,
    pub reg_targets: RegTargets,
    /// Regression-only epochs on the shared and regression layers before
    /// joint training.
    pub pretrain_geom_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            base_lr: 0.01,
            momentum: 0.9,
            gamma: 0.5,
            decay_period: 20,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            supervision: Supervision::Geossl,
            geopl_source: GeoplSource::Analytic,
            reg_targets: RegTargets::default(),
            pretrain_geom_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.reg_targets.columns().is_empty() && self.supervision != Supervision::None {
            return Err(Error::invalid("regression targets select no components"));
        }
        Ok(())
    }

    /// λ actually applied: zero without geometric supervision.
    pub fn effective_lambda(&self) -> f64 {
        match self.supervision {
            Supervision::None => 0.0,
            _ => self.lambda,
        }
    }
}
