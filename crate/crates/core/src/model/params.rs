use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use smallnet::{load_checkpoint, save_checkpoint, Array, ParamStore};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{rng_for, TAG_INIT};

/// Parameters split into shared encoder, task head and regression head.
/// Names carry the group as a prefix: `shared.`, `task.`, `reg.`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub shared: ParamStore,
    pub task: ParamStore,
    pub reg: ParamStore,
}

fn name_label(name: &str) -> u64 {
    // FNV-1a keeps every parameter's stream independent of creation order.
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// He-normal weights for a layer with `fan_in` inputs.
fn he_matrix(seed: u64, name: &str, rows: usize, cols: usize, fan_in: usize) -> Array {
    let mut rng = rng_for(seed, &[TAG_INIT, name_label(name)]);
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect::<Vec<f64>>();
    Array::new(vec![rows, cols], data).expect("shape matches data")
}

fn dense_stack(store: &mut ParamStore, seed: u64, prefix: &str, input: usize, widths: &[usize]) {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        let name = format!("{prefix}.fc{i}.w");
        store.insert(name.clone(), he_matrix(seed, &name, fan_in, w, fan_in));
        store.insert(format!("{prefix}.fc{i}.b"), Array::zeros(&[w]));
        fan_in = w;
    }
}

impl ModelParams {
    /// He-initialized weights and zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut shared = ParamStore::new();
        let mut d = cfg.input.dim();
        for (l, &c) in cfg.edge_channels.iter().enumerate() {
            // The edge feature [x_i | x_j - x_i] has 2d inputs.
            for part in ["wc", "we"] {
                let name = format!("shared.edge{l}.{part}");
                shared.insert(name.clone(), he_matrix(seed, &name, d, c, 2 * d));
            }
            shared.insert(format!("shared.edge{l}.b"), Array::zeros(&[c]));
            d = c;
        }
        let total = cfg.edge_total();
        shared.insert(
            "shared.embed.w",
            he_matrix(seed, "shared.embed.w", total, cfg.embed_dim, total),
        );
        shared.insert("shared.embed.b", Array::zeros(&[cfg.embed_dim]));

        let [(tp, tin, tw), (rp, rin, rw)] = cfg.head_layouts();
        let mut task = ParamStore::new();
        dense_stack(&mut task, seed, tp, tin, &tw);
        let mut reg = ParamStore::new();
        dense_stack(&mut reg, seed, rp, rin, &rw);
        Ok(Self { shared, task, reg })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.shared.iter().chain(self.task.iter()).chain(self.reg.iter())
    }

    pub fn numel(&self) -> usize {
        self.shared.numel() + self.task.numel() + self.reg.numel()
    }

    pub fn merged(&self) -> ParamStore {
        let mut all = self.shared.clone();
        all.extend(self.task.clone());
        all.extend(self.reg.clone());
        all
    }

    pub fn from_merged(all: ParamStore) -> Result<Self> {
        let mut out = Self {
            shared: ParamStore::new(),
            task: ParamStore::new(),
            reg: ParamStore::new(),
        };
        for (name, value) in all.iter() {
            let group = match name.split('.').next() {
                Some("shared") => &mut out.shared,
                Some("task") => &mut out.task,
                Some("reg") => &mut out.reg,
                _ => return Err(Error::invalid(format!("parameter `{name}` has no group prefix"))),
            };
            group.insert(name, value.clone());
        }
        Ok(out)
    }

    /// Errors unless every parameter `cfg` needs is present with its shape.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::init(cfg, 0)?;
        let merged = self.merged();
        for (name, w) in want.iter() {
            let have = merged
                .get(name)
                .map(|a| a.shape().to_vec())
                .map_err(|_| Error::invalid(format!("missing parameter `{name}`")))?;
            if have != w.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {have:?}, expected {:?}",
                    w.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_checkpoint(&self.merged(), path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_merged(load_checkpoint(path)?)
    }
}
