//! Edge-convolution network with a semantic head and a geometric
//! regression head, trained on `task + λ·regression`.

mod config;
mod forward;
mod params;
mod train;

pub use config::{
    GeoplSource, InputProps, ModelConfig, RegInput, RegTargets, Supervision, Task, TrainConfig, GEOM_DIM,
};
pub use forward::{
    edge_conv, forward_batch, joint_loss, regression_loss, Bound, Heads, LossNodes, Outputs, PreparedCloud,
};
pub use params::ModelParams;
pub use train::{
    argmax, check_task, evaluate, evaluate_prepared, fit, fit_until, prepare_record, prepare_split, probe_frozen_backbone,
    regression_labels, report_from_predictions, train, train_normal_probe, train_prepared, CloudPrediction,
    Evaluation, Objective, Phase, ProbeOutcome, Trainable, TrainOutcome, EVAL_BATCH,
};

#[cfg(test)]
mod tests {
    use rand::RngExt;
    use smallnet::{Array, Graph};

    use super::*;
    use crate::geomprops::knn_rows;
    use crate::rng::rng_for;
    use crate::vec3::Vec3;

    fn random_matrix(rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize) -> Array {
        Array::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Explicit per-edge evaluation of `max_j relu([x_i | x_j - x_i]·W + b)`.
    fn edge_conv_loops(x: &Array, nbrs: &[usize], k: usize, wc: &Array, we: &Array, b: &Array) -> Vec<f64> {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let c = wc.shape()[1];
        let mut out = vec![f64::NEG_INFINITY; n * c];
        for i in 0..n {
            for &j in &nbrs[i * k..(i + 1) * k] {
                let mut edge = vec![0.0; 2 * d];
                for t in 0..d {
                    edge[t] = x.data()[i * d + t];
                    edge[d + t] = x.data()[j * d + t] - x.data()[i * d + t];
                }
                for o in 0..c {
                    let mut s = b.data()[o];
                    for t in 0..d {
                        s += edge[t] * wc.data()[t * c + o] + edge[d + t] * we.data()[t * c + o];
                    }
                    let v = s.max(0.0);
                    if v > out[i * c + o] {
                        out[i * c + o] = v;
                    }
                }
            }
        }
        out
    }

    fn run_edge_conv(x: &Array, nbrs: &[usize], k: usize, wc: &Array, we: &Array, b: &Array) -> Vec<f64> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (wc, we, b) = (g.param(wc.clone()), g.param(we.clone()), g.param(b.clone()));
        let out = edge_conv(&mut g, xi, nbrs, k, wc, we, b).unwrap();
        g.value(out).data().to_vec()
    }

    #[test]
    fn edge_conv_matches_loops() {
        let mut rng = rng_for(5, &[]);
        let (n, d, c, k) = (8, 3, 6, 3);
        let x = random_matrix(&mut rng, n, d);
        let (wc, we) = (random_matrix(&mut rng, d, c), random_matrix(&mut rng, d, c));
        let b = Array::new(vec![c], (0..c).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let graph = knn_rows(x.data(), d, k, false).unwrap();
        let got = run_edge_conv(&x, graph.flat(), k, &wc, &we, &b);
        let want = edge_conv_loops(&x, graph.flat(), k, &wc, &we, &b);
        for (a, w) in got.iter().zip(&want) {
            assert!((a - w).abs() < 1e-12);
        }
        // a single edge is its own maximum
        let one = knn_rows(x.data(), d, 1, false).unwrap();
        let got = run_edge_conv(&x, one.flat(), 1, &wc, &we, &b);
        let want = edge_conv_loops(&x, one.flat(), 1, &wc, &we, &b);
        for (a, w) in got.iter().zip(&want) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_graph_sees_only_the_centre() {
        let mut rng = rng_for(6, &[]);
        let x = Array::matrix(4, 2, vec![0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7]).unwrap();
        let (wc, we) = (random_matrix(&mut rng, 2, 3), random_matrix(&mut rng, 2, 3));
        let b = Array::zeros(&[3]);
        let nbrs = [1, 2, 0, 2, 0, 1, 0, 1];
        let got = run_edge_conv(&x, &nbrs, 2, &wc, &we, &b);
        for i in 0..4 {
            for o in 0..3 {
                let s = 0.3 * wc.data()[o] - 0.7 * wc.data()[3 + o];
                assert!((got[i * 3 + o] - s.max(0.0)).abs() < 1e-15);
            }
        }
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (wc, we, b) = (g.param(wc), g.param(we), g.param(b));
        assert!(edge_conv(&mut g, xi, &nbrs[..6], 2, wc, we, b).is_err());
    }

    fn tiny_cfg(task: Task) -> ModelConfig {
        ModelConfig {
            task,
            k_graph: 4,
            edge_channels: vec![8, 8],
            embed_dim: 8,
            cls_head: vec![8],
            seg_head: vec![8],
            reg_head: vec![8],
            num_classes: 3,
            num_parts: 5,
            ..ModelConfig::default()
        }
    }

    fn random_cloud(cfg: &ModelConfig, seed: u64, n: usize) -> PreparedCloud {
        let mut rng = rng_for(seed, &[]);
        let pts: Vec<Vec3> = (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect();
        let parts = (0..n).map(|i| i % cfg.num_parts).collect();
        PreparedCloud::new(cfg, pts, 1, parts, None).unwrap()
    }

    fn logits(params: &ModelParams, cfg: &ModelConfig, cloud: &PreparedCloud) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, params, |_| false);
        let out = forward_batch(&mut g, &bound, cfg, &[cloud], Heads { task: true, geom: true }).unwrap();
        (
            g.value(out.task.unwrap()).data().to_vec(),
            g.value(out.geom.unwrap()).data().to_vec(),
        )
    }

    #[test]
    fn output_shapes() {
        let cfg = tiny_cfg(Task::Classification);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let cloud = random_cloud(&cfg, 2, 16);
        let (task, geom) = logits(&params, &cfg, &cloud);
        assert_eq!((task.len(), geom.len()), (3, 16 * GEOM_DIM));
        let cfg = tiny_cfg(Task::Segmentation);
        let params = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(logits(&params, &cfg, &cloud).0.len(), 16 * 5);
    }

    fn permuted(cfg: &ModelConfig, cloud: &PreparedCloud, perm: &[usize]) -> PreparedCloud {
        let pts = perm.iter().map(|&i| cloud.points[i]).collect();
        let parts = perm.iter().map(|&i| cloud.part_labels[i]).collect();
        PreparedCloud::new(cfg, pts, cloud.class_label, parts, None).unwrap()
    }

    #[test]
    fn permutation_invariance_and_equivariance() {
        let n = 24;
        let perm: Vec<usize> = (0..n).map(|i| (7 * i + 3) % n).collect();
        let cfg = tiny_cfg(Task::Classification);
        let params = ModelParams::init(&cfg, 3).unwrap();
        let cloud = random_cloud(&cfg, 4, n);
        let (a, ga) = logits(&params, &cfg, &cloud);
        let (b, gb) = logits(&params, &cfg, &permuted(&cfg, &cloud, &perm));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..GEOM_DIM {
                assert!((gb[i * GEOM_DIM + c] - ga[p * GEOM_DIM + c]).abs() < 1e-12);
            }
        }

        let cfg = tiny_cfg(Task::Segmentation);
        let params = ModelParams::init(&cfg, 3).unwrap();
        let (a, _) = logits(&params, &cfg, &cloud);
        let (b, _) = logits(&params, &cfg, &permuted(&cfg, &cloud, &perm));
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..5 {
                assert!((b[i * 5 + c] - a[p * 5 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_loss_cases() {
        let mut g = Graph::new();
        let logits = g.param(Array::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let pred = g.param(Array::matrix(2, 4, vec![0.0, 0.0, 1.0, 0.1, 1.0, 0.0, 0.0, 0.2]).unwrap());
        let target = Array::matrix(2, 4, vec![0.0, 0.6, 0.8, 0.0, 1.0, 0.0, 0.0, 0.3]).unwrap();
        let reg = regression_loss(&mut g, pred, target, &[true, true], &[0, 1, 2, 3]).unwrap();
        // row 0: |n - n̂|² = 0.36 + 0.04, (u - û)² = 0.01; row 1: 0.01
        let want = (0.36 + 0.04 + 0.01 + 0.01) / 2.0;
        assert!((g.value(reg).data()[0] - want).abs() < 1e-12);
        let zero = joint_loss(&mut g, logits, &[2], Some(reg), 0.0).unwrap();
        assert_eq!(zero.total, zero.task);
        let mixed = joint_loss(&mut g, logits, &[2], Some(reg), 0.5).unwrap();
        let task = g.value(mixed.task).data()[0];
        assert!((g.value(mixed.total).data()[0] - (task + 0.5 * want)).abs() < 1e-15);

        // perfect regression, and a normals-only column subset
        let same = g.param(Array::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.2]).unwrap());
        let t = Array::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.2]).unwrap();
        let r = regression_loss(&mut g, same, t, &[true], &[0, 1, 2, 3]).unwrap();
        assert_eq!(g.value(r).data()[0], 0.0);
        let t = Array::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.9]).unwrap();
        let r = regression_loss(&mut g, same, t, &[true], &[0, 1, 2]).unwrap();
        assert_eq!(g.value(r).data()[0], 0.0);
    }

    #[test]
    fn argmax_ties_to_smallest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny_cfg(Task::Classification);
        let params = ModelParams::init(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        params.save(&path).unwrap();
        let back = ModelParams::load(&path).unwrap();
        assert_eq!(back, params);
        back.check_against(&cfg).unwrap();
        assert!(back.check_against(&ModelConfig::default()).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = tiny_cfg(Task::Classification);
        assert_eq!(ModelParams::init(&cfg, 1).unwrap(), ModelParams::init(&cfg, 1).unwrap());
        assert_ne!(ModelParams::init(&cfg, 1).unwrap(), ModelParams::init(&cfg, 2).unwrap());
        let p = ModelParams::init(&cfg, 1).unwrap();
        assert!(p.shared.names().all(|n| n.starts_with("shared.")));
        assert!(p.task.names().all(|n| n.starts_with("task.")));
        assert!(p.reg.names().all(|n| n.starts_with("reg.")));
        assert_eq!(p.reg.get("reg.fc1.w").unwrap().shape(), &[8, GEOM_DIM]);
    }
}
