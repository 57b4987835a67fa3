//! Recording graph of dense-array operations with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value, so node ids are
//! already a topological order. [`Graph::backward`] walks them in reverse.

use crate::array::{gemm, Array};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    GatherRows {
        src: NodeId,
        indices: Vec<usize>,
    },
    Reshape(NodeId),
    EdgeMax {
        center: NodeId,
        neighbor: NodeId,
        bias: NodeId,
        /// Winning source row in `neighbor` per output entry, `None` when
        /// the maximum was clipped to zero.
        winners: Vec<Option<usize>>,
    },
    MaxOverAxis {
        src: NodeId,
        argmax: Vec<usize>,
    },
    MeanOverAxis {
        src: NodeId,
        axis: usize,
    },
    Sum(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
        mask: Vec<bool>,
        count: usize,
    },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Relu(x) | Op::Reshape(x) | Op::Sum(x) => vec![*x],
            Op::Concat(parts) => parts.clone(),
            Op::GatherRows { src, .. }
            | Op::MaxOverAxis { src, .. }
            | Op::MeanOverAxis { src, .. } => vec![*src],
            Op::EdgeMax {
                center,
                neighbor,
                bias,
                ..
            } => vec![*center, *neighbor, *bias],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, target, .. } => vec![*pred, *target],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph. Build one per forward pass.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    /// New graph; non-finite checks are on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Array) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf treated as data; backward never allocates a gradient for it.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Array, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Array, op: Op) -> Result<NodeId> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shapes("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        self.push("matmul", Array::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    /// Adds a length-`cols` bias vector to every row of a 2-D array.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2("add_bias")?;
        if self.shape(bias) != [cols] {
            return Err(Error::shapes("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(cols) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push("add_bias", Array::matrix(rows, cols, out)?, Op::AddBias(x, bias))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shapes(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Array::new(self.shape(a).to_vec(), data)?;
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|e| e * factor).collect();
        let value = Array::new(v.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|e| e.max(0.0)).collect();
        let value = Array::new(v.shape().to_vec(), data)?;
        self.push("relu", value, Op::Relu(x))
    }

    /// Concatenates 2-D arrays with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let (rows, _) = self.value(first).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat")?;
            if r != rows {
                return Err(Error::shapes("concat", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(
            "concat",
            Array::matrix(rows, total, out)?,
            Op::Concat(parts.to_vec()),
        )
    }

    /// Selects rows of a 2-D array; indices may repeat.
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2("gather_rows")?;
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(
                "gather_rows",
                format!("row index {bad} out of range for {rows} rows"),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        self.push(
            "gather_rows",
            Array::matrix(indices.len(), cols, out)?,
            Op::GatherRows {
                src: x,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(x))
    }

    /// `out[i, c] = max_j relu(center[i, c] + neighbor[t[i, j], c] + bias[c])`
    /// for a row-major `rows x k` index table `t` into the rows of
    /// `neighbor`.
    ///
    /// Equal to gathering, adding, applying ReLU and taking the maximum over
    /// the `k` entries, without materialising the `rows * k` intermediate.
    /// Ties resolve to the first entry of the row.
    pub fn edge_max(
        &mut self,
        center: NodeId,
        neighbor: NodeId,
        table: &[usize],
        k: usize,
        bias: NodeId,
    ) -> Result<NodeId> {
        let (rows, cols) = self.value(center).dims2("edge_max")?;
        let (src_rows, src_cols) = self.value(neighbor).dims2("edge_max")?;
        if src_cols != cols || self.shape(bias) != [cols] {
            return Err(Error::shapes("edge_max", self.shape(center), self.shape(neighbor)));
        }
        if k == 0 || table.len() != rows * k {
            return Err(Error::invalid(
                "edge_max",
                format!("table of {} entries for {rows} rows and k = {k}", table.len()),
            ));
        }
        if let Some(bad) = table.iter().find(|&&j| j >= src_rows) {
            return Err(Error::invalid(
                "edge_max",
                format!("row index {bad} out of range for {src_rows} rows"),
            ));
        }
        let c_data = self.value(center).data();
        let n_data = self.value(neighbor).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; rows * cols];
        let mut winners = vec![None; rows * cols];
        let mut best = vec![0.0; cols];
        let mut at = vec![0usize; cols];
        for i in 0..rows {
            let ci = &c_data[i * cols..(i + 1) * cols];
            let row = &table[i * k..(i + 1) * k];
            let first = &n_data[row[0] * cols..(row[0] + 1) * cols];
            for c in 0..cols {
                best[c] = (ci[c] + first[c]) + b[c];
                at[c] = row[0];
            }
            for &j in &row[1..] {
                let nj = &n_data[j * cols..(j + 1) * cols];
                for c in 0..cols {
                    let v = (ci[c] + nj[c]) + b[c];
                    if v > best[c] {
                        best[c] = v;
                        at[c] = j;
                    }
                }
            }
            for c in 0..cols {
                if best[c] > 0.0 {
                    out[i * cols + c] = best[c];
                    winners[i * cols + c] = Some(at[c]);
                }
            }
        }
        self.push(
            "edge_max",
            Array::matrix(rows, cols, out)?,
            Op::EdgeMax {
                center,
                neighbor,
                bias,
                winners,
            },
        )
    }

    /// Maximum along `axis`; ties resolve to the smallest index along it.
    pub fn max_over_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid(
                "max_over_axis",
                format!("axis {axis} invalid for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = base;
                for j in 1..len {
                    let at = base + j * inner;
                    if src[at] > src[best] {
                        best = at;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.push(
            "max_over_axis",
            Array::new(out_shape, out)?,
            Op::MaxOverAxis { src: x, argmax },
        )
    }

    pub fn mean_over_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid(
                "mean_over_axis",
                format!("axis {axis} invalid for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        self.push(
            "mean_over_axis",
            Array::new(out_shape, out)?,
            Op::MeanOverAxis { src: x, axis },
        )
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = self.value(x).sum();
        self.push("sum", Array::scalar(total), Op::Sum(x))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    ///
    /// Uses max-subtraction so logits of magnitude 1e4 stay finite.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (rows, classes) = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != rows {
            return Err(Error::shapes(
                "softmax_cross_entropy",
                self.shape(logits),
                &[labels.len()],
            ));
        }
        if rows == 0 {
            return Err(Error::invalid("softmax_cross_entropy", "no rows"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p /= z;
            }
            loss += z.ln() + max - row[labels[r]];
        }
        loss /= rows as f64;
        self.push(
            "softmax_cross_entropy",
            Array::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean over unmasked rows of the squared Euclidean row error.
    ///
    /// `mask[r] == true` keeps row `r`. With every row masked out the loss is
    /// zero and carries no gradient.
    pub fn mse(&mut self, pred: NodeId, target: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shapes("mse", self.shape(pred), self.shape(target)));
        }
        let (rows, cols) = self.value(pred).dims2("mse")?;
        let mask = match mask {
            Some(m) if m.len() != rows => {
                return Err(Error::shapes("mse", self.shape(pred), &[m.len()]));
            }
            Some(m) => m.to_vec(),
            None => vec![true; rows],
        };
        let count = mask.iter().filter(|&&m| m).count();
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mut total = 0.0;
        for r in (0..rows).filter(|&r| mask[r]) {
            for c in 0..cols {
                let d = p[r * cols + c] - t[r * cols + c];
                total += d * d;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            "mse",
            Array::scalar(loss),
            Op::Mse {
                pred,
                target,
                mask,
                count,
            },
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Array>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| Array::zeros(node.value.shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, op: &Op, value: &Array, g: &Array, grads: &mut [Option<Array>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                self.accumulate(grads, *a, |da| {
                    gemm(m, n, k, gd, false, bv.data(), true, 1.0, da)
                });
                self.accumulate(grads, *b, |db| {
                    gemm(k, m, n, av.data(), true, gd, false, 1.0, db)
                });
            }
            Op::AddBias(x, b) => {
                let cols = value.shape()[1];
                self.accumulate(grads, *x, |dx| add_into(dx, gd));
                self.accumulate(grads, *b, |db| {
                    for row in gd.chunks_exact(cols) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| add_into(db, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| {
                    for (d, v) in db.iter_mut().zip(gd) {
                        *d -= v;
                    }
                });
            }
            Op::Scale(x, factor) => self.accumulate(grads, *x, |dx| {
                for (d, v) in dx.iter_mut().zip(gd) {
                    *d += factor * v;
                }
            }),
            Op::Relu(x) => self.accumulate(grads, *x, |dx| {
                for ((d, v), out) in dx.iter_mut().zip(gd).zip(value.data()) {
                    if *out > 0.0 {
                        *d += v;
                    }
                }
            }),
            Op::Concat(parts) => {
                let (rows, total) = (value.shape()[0], value.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.accumulate(grads, p, |dp| {
                        for r in 0..rows {
                            add_into(
                                &mut dp[r * w..(r + 1) * w],
                                &gd[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows { src, indices } => {
                let cols = value.shape()[1];
                self.accumulate(grads, *src, |ds| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(
                            &mut ds[i * cols..(i + 1) * cols],
                            &gd[r * cols..(r + 1) * cols],
                        );
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |dx| add_into(dx, gd)),
            Op::EdgeMax {
                center,
                neighbor,
                bias,
                winners,
            } => {
                let cols = value.shape()[1];
                self.accumulate(grads, *center, |dc| {
                    for ((d, w), v) in dc.iter_mut().zip(winners).zip(gd) {
                        if w.is_some() {
                            *d += v;
                        }
                    }
                });
                self.accumulate(grads, *neighbor, |dn| {
                    for (e, (w, v)) in winners.iter().zip(gd).enumerate() {
                        if let Some(j) = w {
                            dn[j * cols + e % cols] += v;
                        }
                    }
                });
                self.accumulate(grads, *bias, |db| {
                    for (e, (w, v)) in winners.iter().zip(gd).enumerate() {
                        if w.is_some() {
                            db[e % cols] += v;
                        }
                    }
                });
            }
            Op::MaxOverAxis { src, argmax } => self.accumulate(grads, *src, |ds| {
                for (&at, v) in argmax.iter().zip(gd) {
                    ds[at] += v;
                }
            }),
            Op::MeanOverAxis { src, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*src), *axis);
                let inv = 1.0 / len as f64;
                self.accumulate(grads, *src, |ds| {
                    for o in 0..outer {
                        let go = &gd[o * inner..(o + 1) * inner];
                        for j in 0..len {
                            let row = &mut ds[(o * len + j) * inner..(o * len + j + 1) * inner];
                            for (d, v) in row.iter_mut().zip(go) {
                                *d += v * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += s));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let rows = labels.len();
                let classes = probs.len() / rows;
                let s = gd[0] / rows as f64;
                self.accumulate(grads, *logits, |dl| {
                    for r in 0..rows {
                        for c in 0..classes {
                            let onehot = if labels[r] == c { 1.0 } else { 0.0 };
                            dl[r * classes + c] += s * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
            Op::Mse {
                pred,
                target,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let cols = self.shape(*pred)[1];
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let s = 2.0 * gd[0] / *count as f64;
                let diff = |i: usize| s * (p[i] - t[i]);
                self.accumulate(grads, *pred, |dp| {
                    for r in (0..mask.len()).filter(|&r| mask[r]) {
                        for i in r * cols..(r + 1) * cols {
                            dp[i] += diff(i);
                        }
                    }
                });
                self.accumulate(grads, *target, |dt| {
                    for r in (0..mask.len()).filter(|&r| mask[r]) {
                        for i in r * cols..(r + 1) * cols {
                            dt[i] -= diff(i);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of `id`; all zeros when the node does not reach the loss.
    pub fn get(&self, id: NodeId) -> Array {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array::zeros(&self.shapes[id.0]),
        }
    }

    /// Moves the gradient out, zero-filled when absent.
    pub fn take(&mut self, id: NodeId) -> Array {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Array::zeros(&self.shapes[id.0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(arr(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn saturated_cross_entropy_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(arr(&[1, 3], &[1000.0, 0.0, 0.0]));
        let l = g.softmax_cross_entropy(x, &[0]).unwrap();
        let v = g.value(l).item().unwrap();
        assert!(v.abs() < 1e-300, "{v}");
    }

    #[test]
    fn cross_entropy_large_logits_finite() {
        let mut g = Graph::new().with_finite_checks(true);
        let x = g.param(arr(&[2, 3], &[1e4, -1e4, 5e3, -1e4, 1e4, 0.0]));
        let l = g.softmax_cross_entropy(x, &[1, 0]).unwrap();
        let v = g.value(l).item().unwrap();
        assert!(v.is_finite());
        assert!((v - (2e4 + 2e4) / 2.0).abs() < 1e-6);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).all_finite());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(arr(&[2, 3, 2], &[0.5; 12]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0; 12]);
        assert_eq!(grads.get(x).shape(), &[2, 3, 2]);
    }

    #[test]
    fn unused_branch_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(arr(&[2], &[1.0, 2.0]));
        let unused = g.param(arr(&[2, 2], &[3.0; 4]));
        let _dangling = g.relu(unused).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused), Array::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(arr(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Array::zeros(&[2, 3]));
        let b = g.constant(Array::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn max_ties_pick_smallest_index() {
        let mut g = Graph::new();
        let x = g.param(arr(&[1, 3, 1], &[2.0, 2.0, 1.0]));
        let m = g.max_over_axis(x, 1).unwrap();
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn mse_masks_rows() {
        let mut g = Graph::new();
        let p = g.param(arr(&[3, 2], &[1.0, 1.0, 0.0, 0.0, 5.0, 5.0]));
        let t = g.constant(Array::zeros(&[3, 2]));
        let l = g.mse(p, t, Some(&[true, true, false])).unwrap();
        assert_eq!(g.value(l).item(), Some(1.0));
        let l0 = g.mse(p, t, Some(&[false, false, false])).unwrap();
        assert_eq!(g.value(l0).item(), Some(0.0));
    }

    #[test]
    fn non_finite_trips_check() {
        let mut g = Graph::new().with_finite_checks(true);
        let x = g.constant(arr(&[2], &[1e308, 1e308]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }
}
