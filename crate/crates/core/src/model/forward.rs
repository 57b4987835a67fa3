use std::collections::BTreeMap;

use smallnet::{Array, Graph, NodeId};

use super::config::{ModelConfig, RegInput, Task};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::geomprops::{knn, knn_rows, GeomProps, KnnGraph};
use crate::vec3::Vec3;

/// One cloud converted to network inputs and targets.
#[derive(Clone, Debug)]
pub struct PreparedCloud {
    pub points: Vec<Vec3>,
    /// Row-major `n x input_dim` network input.
    pub features: Vec<f64>,
    /// Coordinate-space graph used by the first edge layer.
    pub coord_graph: KnnGraph,
    pub class_label: usize,
    pub part_labels: Vec<usize>,
    /// Row-major `n x 4` regression targets, when the run has any.
    pub targets: Option<Vec<f64>>,
    /// `false` for points excluded from the regression loss.
    pub mask: Vec<bool>,
    /// Reference normals for evaluation.
    pub gt_normals: Option<Vec<Vec3>>,
}

impl PreparedCloud {
    /// `input_props` are appended to xyz according to `cfg.input`.
    pub fn new(
        cfg: &ModelConfig,
        points: Vec<Vec3>,
        class_label: usize,
        part_labels: Vec<usize>,
        input_props: Option<&GeomProps>,
    ) -> Result<Self> {
        let n = points.len();
        if n <= cfg.k_graph {
            return Err(Error::invalid(format!(
                "cloud of {n} points is too small for k_graph = {}",
                cfg.k_graph
            )));
        }
        if part_labels.len() != n {
            return Err(Error::invalid("part labels do not match the point count"));
        }
        let uses_props = cfg.input.normals || cfg.input.curvature;
        let props = match input_props {
            Some(p) if p.len() == n => Some(p),
            Some(_) => return Err(Error::invalid("input properties do not match the point count")),
            None if uses_props => return Err(Error::invalid("model expects geometric input features")),
            None => None,
        };
        let mut features = Vec::with_capacity(n * cfg.input.dim());
        for (i, p) in points.iter().enumerate() {
            features.extend_from_slice(p);
            if let Some(g) = props {
                if cfg.input.normals {
                    features.extend_from_slice(&g.normals[i]);
                }
                if cfg.input.curvature {
                    features.push(g.curvature[i]);
                }
            }
        }
        let coord_graph = knn(&points, cfg.k_graph, false)?;
        Ok(Self {
            points,
            features,
            coord_graph,
            class_label,
            part_labels,
            targets: None,
            mask: vec![true; n],
            gt_normals: None,
        })
    }

    pub fn with_targets(mut self, labels: &GeomProps) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid("geometric labels do not match the point count"));
        }
        self.targets = Some(labels.targets());
        self.mask = labels.valid_mask();
        Ok(self)
    }

    pub fn with_gt_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.len() {
            return Err(Error::invalid("reference normals do not match the point count"));
        }
        self.gt_normals = Some(normals);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Graph nodes for every parameter of a model.
pub struct Bound {
    nodes: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Adds parameters to `g`; those rejected by `trainable` become constants.
    pub fn new(g: &mut Graph, params: &ModelParams, trainable: impl Fn(&str) -> bool) -> Self {
        let nodes = params
            .iter()
            .map(|(name, value)| {
                let id = if trainable(name) {
                    g.param(value.clone())
                } else {
                    g.constant(value.clone())
                };
                (name.to_string(), id)
            })
            .collect();
        Self { nodes }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Edge convolution over a fixed neighbour table.
///
/// For each row `i` of `x` and each of its `k` neighbours `j` (a flat,
/// row-major `rows x k` table of row indices), the edge feature
/// `[x_i | x_j - x_i]` goes through one linear layer with ReLU, and the
/// outputs are max-pooled over the `k` edges. The weight is split into the
/// blocks acting on `x_i` (`wc`) and on `x_j - x_i` (`we`), which lets the
/// products be taken per point instead of per edge:
/// `x_i·wc + (x_j - x_i)·we = x_i·(wc - we) + x_j·we`.
pub fn edge_conv(
    g: &mut Graph,
    x: NodeId,
    neighbors: &[usize],
    k: usize,
    wc: NodeId,
    we: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let rows = g.shape(x)[0];
    if k == 0 || neighbors.len() != rows * k {
        return Err(Error::invalid(format!(
            "neighbour table of {} entries does not hold {k} per row for {rows} rows",
            neighbors.len()
        )));
    }
    let p = g.matmul(x, wc)?;
    let q = g.matmul(x, we)?;
    let center = g.sub(p, q)?;
    Ok(g.edge_max(center, q, neighbors, k, bias)?)
}

/// Dense layers `prefix.fc{i}` with ReLU between them, none after the last.
fn dense_stack(g: &mut Graph, bound: &Bound, prefix: &str, layers: usize, mut h: NodeId) -> Result<NodeId> {
    for i in 0..layers {
        let w = bound.get(&format!("{prefix}.fc{i}.w"))?;
        let b = bound.get(&format!("{prefix}.fc{i}.b"))?;
        let z = g.matmul(h, w)?;
        h = g.add_bias(z, b)?;
        if i + 1 < layers {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Output nodes of one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `(batch, classes)` or `(batch * n, parts)`; absent when not requested.
    pub task: Option<NodeId>,
    /// `(batch * n, 4)`: predicted normal and curvature per point.
    pub geom: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub task: bool,
    pub geom: bool,
}

/// Runs the network on equal-size clouds. Graphs never link different
/// clouds.
pub fn forward_batch(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ModelConfig,
    clouds: &[&PreparedCloud],
    heads: Heads,
) -> Result<Outputs> {
    let first = clouds.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let n = first.len();
    if clouds.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("clouds in a batch must have equal size"));
    }
    let b = clouds.len();
    let d = cfg.input.dim();
    let k = cfg.k_graph;
    let mut input = Vec::with_capacity(b * n * d);
    for c in clouds {
        if c.features.len() != n * d {
            return Err(Error::invalid("cloud features do not match the model input width"));
        }
        input.extend_from_slice(&c.features);
    }
    let mut h = g.constant(Array::matrix(b * n, d, input)?);

    let mut layer_outputs = Vec::with_capacity(cfg.edge_channels.len());
    for l in 0..cfg.edge_channels.len() {
        let mut table = Vec::with_capacity(b * n * k);
        for (ci, c) in clouds.iter().enumerate() {
            let offset = ci * n;
            if l == 0 || !cfg.dynamic_graph {
                table.extend(c.coord_graph.flat().iter().map(|j| j + offset));
            } else {
                let width = g.shape(h)[1];
                let rows = &g.value(h).data()[offset * width..(offset + n) * width];
                let graph = knn_rows(rows, width, k, false)?;
                table.extend(graph.flat().iter().map(|j| j + offset));
            }
        }
        h = edge_conv(
            g,
            h,
            &table,
            k,
            bound.get(&format!("shared.edge{l}.wc"))?,
            bound.get(&format!("shared.edge{l}.we"))?,
            bound.get(&format!("shared.edge{l}.b"))?,
        )?;
        layer_outputs.push(h);
    }
    let edge_features = g.concat(&layer_outputs)?;
    let z = g.matmul(edge_features, bound.get("shared.embed.w")?)?;
    let z = g.add_bias(z, bound.get("shared.embed.b")?)?;
    let embedding = g.relu(z)?;

    let [(_, _, task_widths), (_, _, reg_widths)] = cfg.head_layouts();
    let task = if heads.task {
        let e = cfg.embed_dim;
        let per_cloud = g.reshape(embedding, &[b, n, e])?;
        let pooled = g.max_over_axis(per_cloud, 1)?;
        let head_in = match cfg.task {
            Task::Classification => pooled,
            Task::Segmentation => {
                let owner: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, n)).collect();
                let global = g.gather_rows(pooled, &owner)?;
                g.concat(&[embedding, global])?
            }
        };
        Some(dense_stack(g, bound, "task", task_widths.len(), head_in)?)
    } else {
        None
    };
    let geom = if heads.geom {
        let reg_in = match cfg.reg_input {
            RegInput::Embedding => embedding,
            RegInput::EdgeFeatures => edge_features,
        };
        Some(dense_stack(g, bound, "reg", reg_widths.len(), reg_in)?)
    } else {
        None
    };
    Ok(Outputs { task, geom })
}

/// Loss nodes of [`joint_loss`].
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub task: NodeId,
    pub reg: Option<NodeId>,
}

/// Constant matrix selecting `cols` out of `width` columns.
fn column_selector(width: usize, cols: &[usize]) -> Result<Array> {
    let mut data = vec![0.0; width * cols.len()];
    for (j, &c) in cols.iter().enumerate() {
        data[c * cols.len() + j] = 1.0;
    }
    Ok(Array::matrix(width, cols.len(), data)?)
}

/// Masked squared error between the selected columns of `geom` and
/// `targets`, averaged over unmasked rows.
pub fn regression_loss(
    g: &mut Graph,
    geom: NodeId,
    targets: Array,
    mask: &[bool],
    cols: &[usize],
) -> Result<NodeId> {
    if !mask.iter().any(|&m| m) {
        log::warn!("every point is degenerate; regression loss is zero");
    }
    let target = g.constant(targets);
    if cols.len() == g.shape(geom)[1] && cols.iter().enumerate().all(|(i, &c)| i == c) {
        return Ok(g.mse(geom, target, Some(mask))?);
    }
    let sel = g.constant(column_selector(g.shape(geom)[1], cols)?);
    let pred = g.matmul(geom, sel)?;
    let target = g.matmul(target, sel)?;
    Ok(g.mse(pred, target, Some(mask))?)
}

/// `total = task + λ·reg`; with `λ = 0` the total is the task node itself,
/// while a supplied regression loss is still recorded.
pub fn joint_loss(
    g: &mut Graph,
    task_output: NodeId,
    labels: &[usize],
    reg: Option<NodeId>,
    lambda: f64,
) -> Result<LossNodes> {
    let task = g.softmax_cross_entropy(task_output, labels)?;
    let total = match reg {
        Some(r) if lambda != 0.0 => {
            let weighted = g.scale(r, lambda)?;
            g.add(task, weighted)?
        }
        _ => task,
    };
    Ok(LossNodes { total, task, reg })
}
