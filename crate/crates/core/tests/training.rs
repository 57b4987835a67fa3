//! End-to-end checks of the training and evaluation loops on tiny data.

use geoaux::model::{
    evaluate, forward_batch, joint_loss, prepare_split, probe_frozen_backbone, regression_loss, train, Bound,
    Heads, ModelConfig, ModelParams, PreparedCloud, Supervision, Task, TrainConfig,
};
use geoaux::synthdata::{gen_dataset, Dataset, DatasetSpec};
use smallnet::gradcheck::{numeric_gradient, relative_error};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallnet::{Array, Graph};

fn tiny_data(train_per_class: usize, test_per_class: usize, seed: u64) -> Dataset {
    gen_dataset(&DatasetSpec {
        train_per_class,
        test_per_class,
        points: 64,
        dense_points: 512,
        k: 10,
        seed,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn small_model(task: Task) -> ModelConfig {
    ModelConfig {
        task,
        k_graph: 8,
        edge_channels: vec![8, 8],
        embed_dim: 16,
        cls_head: vec![16],
        seg_head: vec![16],
        reg_head: vec![16, 8],
        ..ModelConfig::default()
    }
}

fn tiny_model(task: Task, dynamic_graph: bool) -> ModelConfig {
    ModelConfig {
        task,
        k_graph: 4,
        edge_channels: vec![6, 8],
        embed_dim: 8,
        cls_head: vec![7],
        seg_head: vec![7],
        reg_head: vec![8, 5],
        dynamic_graph,
        ..ModelConfig::default()
    }
}

/// Joint loss of `params` on `batch`, with gradients when requested.
fn loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[&PreparedCloud],
    grads: bool,
) -> (f64, Vec<(String, Vec<f64>)>) {
    let mut g = Graph::new().with_finite_checks(false);
    let bound = Bound::new(&mut g, params, |_| true);
    let out = forward_batch(&mut g, &bound, cfg, batch, Heads { task: true, geom: true }).unwrap();
    let n: usize = batch.iter().map(|c| c.len()).sum();
    let targets: Vec<f64> = batch.iter().flat_map(|c| c.targets.clone().unwrap()).collect();
    let mask: Vec<bool> = batch.iter().flat_map(|c| c.mask.clone()).collect();
    let reg = regression_loss(&mut g, out.geom.unwrap(), Array::matrix(n, 4, targets).unwrap(), &mask, &[0, 1, 2, 3])
        .unwrap();
    let labels: Vec<usize> = match cfg.task {
        Task::Classification => batch.iter().map(|c| c.class_label).collect(),
        Task::Segmentation => batch.iter().flat_map(|c| c.part_labels.clone()).collect(),
    };
    let losses = joint_loss(&mut g, out.task.unwrap(), &labels, Some(reg), 0.7).unwrap();
    let value = g.value(losses.total).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    let mut gr = g.backward(losses.total).unwrap();
    let named = bound.iter().map(|(name, id)| (name.to_string(), gr.take(id).into_data())).collect();
    (value, named)
}

/// Initial weights with random biases. Zero biases put every row whose
/// input is all zero exactly on a ReLU kink, where the loss has no gradient.
fn generic_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = ModelParams::init(cfg, seed).unwrap().merged();
    let names: Vec<String> = all.names().filter(|n| n.ends_with(".b")).map(String::from).collect();
    for name in names {
        for v in all.get_mut(&name).unwrap().data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
    ModelParams::from_merged(all).unwrap()
}

/// Worst norm-wise relative error over all parameter tensors.
fn model_gradcheck(cfg: &ModelConfig, seed: u64, data: &[PreparedCloud]) -> f64 {
    let params = generic_params(cfg, seed);
    let batch: Vec<&PreparedCloud> = data.iter().collect();
    let (_, analytic) = loss_and_grads(&params, cfg, &batch, true);
    let mut worst: f64 = 0.0;
    for (name, grad) in analytic {
        let merged = params.merged();
        let base = merged.get(&name).unwrap().clone();
        let numeric = numeric_gradient(base.data(), 1e-5, |x| {
            let mut m = merged.clone();
            m.get_mut(&name).unwrap().data_mut().copy_from_slice(x);
            loss_and_grads(&ModelParams::from_merged(m).unwrap(), cfg, &batch, false).0
        });
        let err = relative_error(&grad, &numeric);
        assert!(err.is_finite(), "{name}");
        worst = worst.max(err);
    }
    worst
}

/// Two 16-point clouds cut from a generated dataset, with regression targets.
fn gradcheck_batch(cfg: &ModelConfig, data_seed: u64) -> Vec<PreparedCloud> {
    let d = tiny_data(1, 1, data_seed);
    let tcfg = TrainConfig::default();
    let mut split = d.train.clone();
    for rec in &mut split.clouds {
        let keep: Vec<usize> = (0..16).map(|i| i * 4).collect();
        rec.points = keep.iter().map(|&i| rec.points[i]).collect();
        rec.part_labels = keep.iter().map(|&i| rec.part_labels[i]).collect();
        rec.geossl = rec.geossl.select(&keep);
        rec.geopl = rec.geopl.select(&keep);
    }
    split.clouds.truncate(2);
    prepare_split(cfg, &split, Some(&tcfg)).unwrap()
}

#[test]
fn full_tiny_model_passes_finite_differences() {
    for seed in 0..20 {
        let task = if seed % 2 == 0 { Task::Classification } else { Task::Segmentation };
        let cfg = tiny_model(task, seed % 4 < 2);
        let data = gradcheck_batch(&cfg, seed);
        let err = model_gradcheck(&cfg, seed, &data);
        assert!(err < 1e-4, "seed {seed} ({task:?}): relative error {err:e}");
    }
}

#[test]
fn zero_lambda_matches_baseline_bit_for_bit() {
    let d = tiny_data(2, 2, 1);
    let cfg = small_model(Task::Classification);
    let base = TrainConfig {
        epochs: 3,
        supervision: Supervision::None,
        seed: 4,
        ..TrainConfig::default()
    };
    let zero = TrainConfig {
        lambda: 0.0,
        supervision: Supervision::Geossl,
        ..base.clone()
    };
    let a = train(&d.train, &cfg, &base).unwrap();
    let b = train(&d.train, &cfg, &zero).unwrap();
    assert_eq!(a.params, b.params);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.task_loss.to_bits(), y.task_loss.to_bits());
        assert_eq!(x.total.to_bits(), y.total.to_bits());
    }
    let ea = evaluate(&a.params, &cfg, &d.test).unwrap();
    let eb = evaluate(&b.params, &cfg, &d.test).unwrap();
    assert_eq!(ea.report, eb.report);
    assert_eq!(ea.predictions, eb.predictions);
}

#[test]
fn equal_seeds_give_equal_parameters() {
    let d = tiny_data(2, 1, 2);
    let cfg = small_model(Task::Segmentation);
    let tcfg = TrainConfig {
        epochs: 2,
        seed: 9,
        pretrain_geom_epochs: 1,
        ..TrainConfig::default()
    };
    let a = train(&d.train, &cfg, &tcfg).unwrap();
    let b = train(&d.train, &cfg, &tcfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.pretrain_history.len(), 1);
    let c = train(&d.train, &cfg, &TrainConfig { seed: 10, ..tcfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn frozen_probe_leaves_shared_weights_untouched() {
    let d = tiny_data(2, 1, 3);
    let cfg = small_model(Task::Classification);
    let tcfg = TrainConfig {
        epochs: 2,
        supervision: Supervision::None,
        ..TrainConfig::default()
    };
    let pretrained = train(&d.train, &cfg, &tcfg).unwrap().params;
    let probe = probe_frozen_backbone(&pretrained, &d.train, &d.test, &cfg, &tcfg).unwrap();
    assert_eq!(probe.params.shared, pretrained.shared);
    assert_ne!(probe.params.reg, pretrained.reg);
    assert!(probe.report.normal_cosine_similarity.is_some());
    assert!(probe.report.overall_accuracy.is_none());
}

#[test]
fn untrained_accuracy_is_near_chance() {
    let d = tiny_data(1, 40, 4);
    let cfg = small_model(Task::Classification);
    let k = 5.0;
    let n = d.test.clouds.len() as f64;
    let sigma = (1.0 / k * (1.0 - 1.0 / k) / n).sqrt();
    for seed in 0..3 {
        let params = ModelParams::init(&cfg, seed).unwrap();
        let oa = evaluate(&params, &cfg, &d.test).unwrap().report.overall_accuracy.unwrap();
        assert!((oa - 1.0 / k).abs() <= 3.0 * sigma, "seed {seed}: OA {oa}");
    }
}

#[test]
fn normal_metrics_need_reference_normals() {
    let d = tiny_data(1, 1, 5);
    let cfg = small_model(Task::Classification);
    let params = ModelParams::init(&cfg, 0).unwrap();
    let with = evaluate(&params, &cfg, &d.test).unwrap();
    assert!(with.report.normal_cosine_similarity.is_some());

    let mut data = prepare_split(&cfg, &d.test, None).unwrap();
    data[0].gt_normals = None;
    let without = geoaux::model::evaluate_prepared(&params, &cfg, &d.test.layout(), &data).unwrap();
    assert!(without.report.normal_cosine_similarity.is_none());
    assert!(without.report.normal_rms_angle_deg.is_none());
    assert!(without.report.overall_accuracy.is_some());
}

#[test]
fn smoothed_loss_does_not_increase() {
    let d = tiny_data(2, 1, 6);
    let cfg = small_model(Task::Classification);
    let tcfg = TrainConfig {
        epochs: 40,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let h = train(&d.train, &cfg, &tcfg).unwrap().history;
    let totals: Vec<f64> = h.iter().map(|r| r.total).collect();
    let smooth: Vec<f64> = totals.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (i, w) in smooth.windows(2).enumerate() {
        assert!(w[1] <= w[0], "window {i}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn task_mismatch_is_reported() {
    let d = tiny_data(1, 1, 7);
    let cfg = ModelConfig {
        num_classes: 4,
        ..small_model(Task::Classification)
    };
    let err = train(&d.train, &cfg, &TrainConfig::default()).unwrap_err();
    assert_eq!(err.kind(), "task_mismatch");
}
