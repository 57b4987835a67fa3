use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use smallnet::{Array, EpochRecord, Graph, LrSchedule, OptimState, ParamStore};

use super::config::{GeoplSource, ModelConfig, Supervision, Task, TrainConfig, GEOM_DIM};
use super::forward::{forward_batch, joint_loss, regression_loss, Bound, Heads, PreparedCloud};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::rng::{rng_for, TAG_SHUFFLE};
use crate::geomprops::GeomProps;
use crate::synthdata::{CloudRecord, LabelLayout, Split};
use crate::vec3::{self, Vec3};

/// Geometric labels a training run regresses onto.
pub fn regression_labels<'a>(rec: &'a CloudRecord, cfg: &TrainConfig) -> Result<Option<&'a GeomProps>> {
    match cfg.supervision {
        Supervision::None => Ok(None),
        Supervision::Geossl => Ok(Some(&rec.geossl)),
        Supervision::Geopl => match cfg.geopl_source {
            GeoplSource::Analytic => Ok(Some(&rec.geopl)),
            GeoplSource::Transferred => rec
                .geopl_transferred
                .as_ref()
                .map(Some)
                .ok_or_else(|| Error::invalid("dataset has no transferred privileged labels")),
        },
    }
}

/// Checks that the model's output sizes match the dataset.
pub fn check_task(cfg: &ModelConfig, layout: &LabelLayout) -> Result<()> {
    let (want, have, what) = match cfg.task {
        Task::Classification => (cfg.num_classes, layout.num_classes(), "classes"),
        Task::Segmentation => (cfg.num_parts, layout.num_parts(), "parts"),
    };
    if want != have {
        return Err(Error::TaskMismatch(format!(
            "model predicts {want} {what}, dataset has {have}"
        )));
    }
    Ok(())
}

/// Network inputs for a record; `targets` become regression targets and the
/// privileged normals become evaluation references.
pub fn prepare_record(cfg: &ModelConfig, rec: &CloudRecord, targets: Option<&GeomProps>) -> Result<PreparedCloud> {
    let mut p = PreparedCloud::new(
        cfg,
        rec.points.clone(),
        rec.class_label,
        rec.part_labels.clone(),
        Some(&rec.geossl),
    )?
    .with_gt_normals(rec.geopl.normals.clone())?;
    if let Some(t) = targets {
        p = p.with_targets(t)?;
    }
    Ok(p)
}

pub fn prepare_split(cfg: &ModelConfig, split: &Split, tcfg: Option<&TrainConfig>) -> Result<Vec<PreparedCloud>> {
    check_task(cfg, &split.layout())?;
    split
        .clouds
        .iter()
        .map(|rec| {
            let targets = match tcfg {
                Some(t) => regression_labels(rec, t)?,
                None => None,
            };
            prepare_record(cfg, rec, targets)
        })
        .collect()
}

/// What one optimisation phase minimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Task loss plus λ times the regression loss.
    Joint,
    /// Regression loss alone.
    Regression,
}

/// Parameter groups that receive updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub shared: bool,
    pub task: bool,
    pub reg: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        shared: true,
        task: true,
        reg: true,
    };

    fn allows(&self, name: &str) -> bool {
        match name.split('.').next() {
            Some("shared") => self.shared,
            Some("task") => self.task,
            Some("reg") => self.reg,
            _ => false,
        }
    }
}

fn batch_labels(cfg: &ModelConfig, batch: &[&PreparedCloud]) -> Vec<usize> {
    match cfg.task {
        Task::Classification => batch.iter().map(|c| c.class_label).collect(),
        Task::Segmentation => batch.iter().flat_map(|c| c.part_labels.iter().copied()).collect(),
    }
}

fn batch_targets(batch: &[&PreparedCloud]) -> Result<Option<(Array, Vec<bool>)>> {
    if batch.iter().any(|c| c.targets.is_none()) {
        return Ok(None);
    }
    let n: usize = batch.iter().map(|c| c.len()).sum();
    let mut data = Vec::with_capacity(n * GEOM_DIM);
    let mut mask = Vec::with_capacity(n);
    for c in batch {
        data.extend_from_slice(c.targets.as_deref().unwrap_or_default());
        mask.extend_from_slice(&c.mask);
    }
    Ok(Some((Array::matrix(n, GEOM_DIM, data)?, mask)))
}

/// One optimisation phase. `stream` separates the shuffling streams of
/// phases that share a seed.
#[derive(Clone, Copy, Debug)]
pub struct Phase {
    pub objective: Objective,
    pub trainable: Trainable,
    pub epochs: usize,
    pub stream: u64,
}

/// Runs one phase of SGD over `data`. Epoch numbers in the returned records
/// start at 0 for the phase, as does the learning-rate schedule.
pub fn fit(
    params: &mut ModelParams,
    data: &[PreparedCloud],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    phase: Phase,
) -> Result<Vec<EpochRecord>> {
    fit_until(params, data, cfg, tcfg, phase, |_, _| Ok(false))
}

/// [`fit`] that calls `stop` after every epoch and ends the phase early
/// once it returns `true`.
pub fn fit_until(
    params: &mut ModelParams,
    data: &[PreparedCloud],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    phase: Phase,
    mut stop: impl FnMut(&ModelParams, &EpochRecord) -> Result<bool>,
) -> Result<Vec<EpochRecord>> {
    let Phase {
        objective,
        trainable,
        epochs,
        stream,
    } = phase;
    if data.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let schedule = LrSchedule {
        base_lr: tcfg.base_lr,
        gamma: tcfg.gamma,
        decay_period: tcfg.decay_period,
    };
    let mut opt = OptimState::new(schedule, tcfg.momentum)?;
    let lambda = tcfg.effective_lambda();
    let cols = tcfg.reg_targets.columns();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let lr = opt.lr_at_epoch(epoch);
        let mut rng = rng_for(tcfg.seed, &[TAG_SHUFFLE, stream, epoch as u64]);
        order.shuffle(&mut rng);
        let (mut task_sum, mut reg_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&PreparedCloud> = chunk.iter().map(|&i| &data[i]).collect();
            let non_finite = || Error::NonFiniteLoss { epoch, batch: bi };
            let step = BatchStep {
                cfg,
                objective,
                trainable,
                lambda,
                cols: &cols,
            };
            let losses = step.run(params, &mut opt, &batch, lr).map_err(|e| match e {
                Error::Net(smallnet::Error::NonFinite { .. }) => non_finite(),
                e => e,
            })?;
            let [task_value, reg_value, total_value] = losses.ok_or_else(non_finite)?;
            let w = batch.len() as f64;
            task_sum += w * task_value;
            reg_sum += w * reg_value;
            total_sum += w * total_value;
        }
        let m = data.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            task_loss: task_sum / m,
            reg_loss: reg_sum / m,
            total: total_sum / m,
        };
        log::debug!("epoch {epoch}: {record:?}");
        history.push(record);
        if stop(params, &record)? {
            break;
        }
    }
    Ok(history)
}

struct BatchStep<'a> {
    cfg: &'a ModelConfig,
    objective: Objective,
    trainable: Trainable,
    lambda: f64,
    cols: &'a [usize],
}

impl BatchStep<'_> {
    /// One SGD update. Returns `[task, reg, total]` losses, or `None` without
    /// updating when the total is not finite.
    fn run(
        &self,
        params: &mut ModelParams,
        opt: &mut OptimState,
        batch: &[&PreparedCloud],
        lr: f64,
    ) -> Result<Option<[f64; 3]>> {
        let targets = batch_targets(batch)?;
        let want_task = self.objective == Objective::Joint;
        let want_geom = targets.is_some();
        if !want_task && !want_geom {
            return Err(Error::invalid("regression objective without regression targets"));
        }

        let mut g = Graph::new();
        let bound = Bound::new(&mut g, params, |name| self.trainable.allows(name));
        let heads = Heads {
            task: want_task,
            geom: want_geom,
        };
        let out = forward_batch(&mut g, &bound, self.cfg, batch, heads)?;
        let reg = match (out.geom, targets) {
            (Some(geom), Some((t, mask))) => Some(regression_loss(&mut g, geom, t, &mask, self.cols)?),
            _ => None,
        };
        let (total, task_value) = match self.objective {
            Objective::Joint => {
                let task_out = out.task.expect("task head requested");
                let losses = joint_loss(&mut g, task_out, &batch_labels(self.cfg, batch), reg, self.lambda)?;
                (losses.total, g.value(losses.task).data()[0])
            }
            Objective::Regression => (reg.expect("regression targets present"), 0.0),
        };
        let total_value = g.value(total).data()[0];
        let reg_value = reg.map_or(0.0, |r| g.value(r).data()[0]);
        if !total_value.is_finite() {
            return Ok(None);
        }
        let mut grads = g.backward(total)?;
        let mut update = ParamStore::new();
        for (name, id) in bound.iter() {
            if self.trainable.allows(name) {
                update.insert(name, grads.take(id));
            }
        }
        let mut all = params.merged();
        opt.step(&mut all, &update, lr)?;
        *params = ModelParams::from_merged(all)?;
        Ok(Some([task_value, reg_value, total_value]))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Regression-only warm-up epochs, if any.
    pub pretrain_history: Vec<EpochRecord>,
    pub history: Vec<EpochRecord>,
}

/// Trains from a fresh initialization seeded by `tcfg.seed`.
pub fn train(split: &Split, cfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let data = prepare_split(cfg, split, Some(tcfg))?;
    train_prepared(&data, cfg, tcfg)
}

pub fn train_prepared(data: &[PreparedCloud], cfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let mut params = ModelParams::init(cfg, tcfg.seed)?;
    let pretrain_history = if tcfg.pretrain_geom_epochs > 0 && tcfg.supervision != Supervision::None {
        let phase = Phase {
            objective: Objective::Regression,
            trainable: Trainable {
                shared: true,
                task: false,
                reg: true,
            },
            epochs: tcfg.pretrain_geom_epochs,
            stream: 1,
        };
        fit(&mut params, data, cfg, tcfg, phase)?
    } else {
        Vec::new()
    };
    let phase = Phase {
        objective: Objective::Joint,
        trainable: Trainable::ALL,
        epochs: tcfg.epochs,
        stream: 0,
    };
    let history = fit(&mut params, data, cfg, tcfg, phase)?;
    Ok(TrainOutcome {
        params,
        pretrain_history,
        history,
    })
}

/// Index of the largest value, ties to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-cloud predictions kept for inspection and recomputing metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPrediction {
    pub class_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_parts: Option<Vec<usize>>,
    /// Unit-normalized predicted normals.
    pub predicted_normals: Vec<Vec3>,
    pub predicted_curvature: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<CloudPrediction>,
}

pub const EVAL_BATCH: usize = 16;

/// Forward pass without gradients over prepared clouds.
pub fn evaluate_prepared(
    params: &ModelParams,
    cfg: &ModelConfig,
    layout: &LabelLayout,
    data: &[PreparedCloud],
) -> Result<Evaluation> {
    check_task(cfg, layout)?;
    if data.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_BATCH) {
        let batch: Vec<&PreparedCloud> = chunk.iter().collect();
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, params, |_| false);
        let out = forward_batch(&mut g, &bound, cfg, &batch, Heads { task: true, geom: true })?;
        let logits = g.value(out.task.expect("task head requested"));
        let geom = g.value(out.geom.expect("geometry head requested"));
        let width = logits.shape()[1];
        let mut row0 = 0;
        for (ci, c) in batch.iter().enumerate() {
            let n = c.len();
            let mut pred = CloudPrediction {
                class_label: c.class_label,
                predicted_class: None,
                part_labels: None,
                predicted_parts: None,
                predicted_normals: Vec::with_capacity(n),
                predicted_curvature: Vec::with_capacity(n),
            };
            match cfg.task {
                Task::Classification => {
                    pred.predicted_class = Some(argmax(&logits.data()[ci * width..(ci + 1) * width]));
                }
                Task::Segmentation => {
                    // Only the parts of the cloud's own category compete.
                    let parts = layout.parts_of(c.class_label);
                    let labels = (row0..row0 + n)
                        .map(|r| {
                            let row = &logits.data()[r * width..(r + 1) * width];
                            parts.start + argmax(&row[parts.clone()])
                        })
                        .collect();
                    pred.part_labels = Some(c.part_labels.clone());
                    pred.predicted_parts = Some(labels);
                }
            }
            for r in row0..row0 + n {
                let v = &geom.data()[r * GEOM_DIM..(r + 1) * GEOM_DIM];
                pred.predicted_normals
                    .push(vec3::normalize([v[0], v[1], v[2]]).unwrap_or(crate::geomprops::FALLBACK_NORMAL));
                pred.predicted_curvature.push(v[3]);
            }
            row0 += n;
            predictions.push(pred);
        }
    }
    let report = report_from_predictions(cfg.task, layout, data, &predictions)?;
    Ok(Evaluation { report, predictions })
}

/// Metrics recomputed from stored predictions.
pub fn report_from_predictions(
    task: Task,
    layout: &LabelLayout,
    data: &[PreparedCloud],
    predictions: &[CloudPrediction],
) -> Result<MetricsReport> {
    let mut report = MetricsReport::new();
    match task {
        Task::Classification => {
            let pred: Vec<usize> = predictions
                .iter()
                .map(|p| p.predicted_class.ok_or_else(|| Error::invalid("missing class prediction")))
                .collect::<Result<_>>()?;
            let truth: Vec<usize> = predictions.iter().map(|p| p.class_label).collect();
            report.set_classification(&pred, &truth)?;
        }
        Task::Segmentation => {
            let parts: Vec<Vec<usize>> = predictions.iter().map(|p| layout.parts_of(p.class_label).collect()).collect();
            let mut shapes = Vec::with_capacity(predictions.len());
            for (p, parts) in predictions.iter().zip(&parts) {
                match (&p.predicted_parts, &p.part_labels) {
                    (Some(pr), Some(t)) => shapes.push((pr.as_slice(), t.as_slice(), parts.as_slice())),
                    _ => return Err(Error::invalid("missing part predictions")),
                }
            }
            report.set_segmentation(&shapes)?;
        }
    }
    if data.iter().all(|c| c.gt_normals.is_some()) {
        let pred: Vec<Vec3> = predictions.iter().flat_map(|p| p.predicted_normals.iter().copied()).collect();
        let gt: Vec<Vec3> = data.iter().flat_map(|c| c.gt_normals.iter().flatten().copied()).collect();
        report.set_normals(&pred, &gt, None)?;
    }
    Ok(report)
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, split: &Split) -> Result<Evaluation> {
    let data = prepare_split(cfg, split, None)?;
    evaluate_prepared(params, cfg, &split.layout(), &data)
}

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub report: MetricsReport,
}

/// Trains a regression head for normal estimation and scores it on `test`.
///
/// With `backbone = Some(params)` the shared encoder is copied from those
/// parameters and frozen; with `None` the encoder trains from scratch
/// alongside the head. Targets are the privileged labels.
pub fn train_normal_probe(
    backbone: Option<&ModelParams>,
    train_split: &Split,
    test_split: &Split,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<ProbeOutcome> {
    let probe_cfg = TrainConfig {
        supervision: Supervision::Geopl,
        ..tcfg.clone()
    };
    probe_cfg.validate()?;
    let mut params = ModelParams::init(cfg, tcfg.seed)?;
    if let Some(b) = backbone {
        b.check_against(cfg)?;
        params.shared = b.shared.clone();
    }
    let data = prepare_split(cfg, train_split, Some(&probe_cfg))?;
    let phase = Phase {
        objective: Objective::Regression,
        trainable: Trainable {
            shared: backbone.is_none(),
            task: false,
            reg: true,
        },
        epochs: tcfg.epochs,
        stream: 2,
    };
    let history = fit(&mut params, &data, cfg, &probe_cfg, phase)?;
    let eval = evaluate(&params, cfg, test_split)?;
    let mut report = MetricsReport::new();
    report.normal_cosine_similarity = eval.report.normal_cosine_similarity;
    report.normal_cosine_distance = eval.report.normal_cosine_distance;
    report.normal_rms_angle_deg = eval.report.normal_rms_angle_deg;
    report.normal_unoriented_cosine_distance = eval.report.normal_unoriented_cosine_distance;
    Ok(ProbeOutcome {
        params,
        history,
        report,
    })
}

/// Normal regression on top of a frozen, classification-trained encoder.
pub fn probe_frozen_backbone(
    pretrained: &ModelParams,
    train_split: &Split,
    test_split: &Split,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<ProbeOutcome> {
    train_normal_probe(Some(pretrained), train_split, test_split, cfg, tcfg)
}
