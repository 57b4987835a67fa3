//! Central finite-difference checks for every primitive.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallnet::gradcheck::check_graph;
use smallnet::{Array, Graph, NodeId};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Largest norm-wise relative error between analytic and numeric gradients.
fn check<F>(build: F, inputs: Vec<Array>) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    check_graph(|g, ids| Ok(build(g, ids)), &inputs, STEP).unwrap()
}

/// Runs `case` on `INSTANCES` seeded instances and asserts the tolerance.
fn run(name: &str, case: impl Fn(&mut ChaCha8Rng) -> f64) {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = case(&mut rng);
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

/// Nonlinear scalar readout so non-scalar outputs get varied upstream gradients.
fn readout(g: &mut Graph, out: NodeId, rng_seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = g.shape(out).to_vec();
    let (rows, cols) = match shape[..] {
        [] => (1, 1),
        [n] => (1, n),
        [r, c] => (r, c),
        _ => (shape[0], shape[1..].iter().product()),
    };
    let flat = g.reshape(out, &[rows, cols]).unwrap();
    let target = g.constant(random_array(&mut rng, &[rows, cols]));
    g.mse(flat, target, None).unwrap()
}

#[test]
fn matmul_gradients() {
    run("matmul", |rng| {
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let a = random_array(rng, &[m, k]);
        let b = random_array(rng, &[k, n]);
        check(
            |g, x| {
                let y = g.matmul(x[0], x[1]).unwrap();
                readout(g, y, 1)
            },
            vec![a, b],
        )
    });
}

#[test]
fn add_bias_add_sub_scale_gradients() {
    run("add_bias", |rng| {
        let x = random_array(rng, &[3, 4]);
        let b = random_array(rng, &[4]);
        check(
            |g, v| {
                let y = g.add_bias(v[0], v[1]).unwrap();
                readout(g, y, 2)
            },
            vec![x, b],
        )
    });
    run("add/sub/scale", |rng| {
        let a = random_array(rng, &[2, 3]);
        let b = random_array(rng, &[2, 3]);
        check(
            |g, v| {
                let s = g.add(v[0], v[1]).unwrap();
                let d = g.sub(s, v[1]).unwrap();
                let d = g.sub(d, v[1]).unwrap();
                let y = g.scale(d, -1.7).unwrap();
                readout(g, y, 3)
            },
            vec![a, b],
        )
    });
}

#[test]
fn relu_gradients() {
    run("relu", |rng| {
        let x = random_array(rng, &[4, 5]);
        check(
            |g, v| {
                let y = g.relu(v[0]).unwrap();
                readout(g, y, 4)
            },
            vec![x],
        )
    });
}

#[test]
fn concat_gather_reshape_gradients() {
    run("concat", |rng| {
        let a = random_array(rng, &[3, 2]);
        let b = random_array(rng, &[3, 4]);
        check(
            |g, v| {
                let y = g.concat(&[v[0], v[1], v[0]]).unwrap();
                readout(g, y, 5)
            },
            vec![a, b],
        )
    });
    run("gather_rows", |rng| {
        let x = random_array(rng, &[5, 3]);
        let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..5)).collect();
        check(
            move |g, v| {
                let y = g.gather_rows(v[0], &idx).unwrap();
                readout(g, y, 6)
            },
            vec![x],
        )
    });
    run("reshape", |rng| {
        let x = random_array(rng, &[2, 6]);
        check(
            |g, v| {
                let y = g.reshape(v[0], &[3, 4]).unwrap();
                readout(g, y, 7)
            },
            vec![x],
        )
    });
}

#[test]
fn edge_max_gradients() {
    run("edge_max", |rng| {
        let (rows, src, cols, k) = (4, 5, 3, rng.random_range(1..4));
        let c = random_array(rng, &[rows, cols]);
        let n = random_array(rng, &[src, cols]);
        let b = random_array(rng, &[cols]);
        let table: Vec<usize> = (0..rows * k).map(|_| rng.random_range(0..src)).collect();
        check(
            move |g, v| {
                let y = g.edge_max(v[0], v[1], &table, k, v[2]).unwrap();
                readout(g, y, 10)
            },
            vec![c, n, b],
        )
    });
}

#[test]
fn edge_max_matches_unfused_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (rows, src, cols, k) = (6, 9, 4, 3);
    let c = random_array(&mut rng, &[rows, cols]);
    let n = random_array(&mut rng, &[src, cols]);
    let b = random_array(&mut rng, &[cols]);
    let table: Vec<usize> = (0..rows * k).map(|_| rng.random_range(0..src)).collect();
    let centers: Vec<usize> = (0..rows).flat_map(|i| std::iter::repeat_n(i, k)).collect();

    let mut g = Graph::new();
    let (ic, in_, ib) = (g.param(c), g.param(n), g.param(b));
    let fused = g.edge_max(ic, in_, &table, k, ib).unwrap();
    let ci = g.gather_rows(ic, &centers).unwrap();
    let nj = g.gather_rows(in_, &table).unwrap();
    let e = g.add(ci, nj).unwrap();
    let e = g.add_bias(e, ib).unwrap();
    let e = g.relu(e).unwrap();
    let e = g.reshape(e, &[rows, k, cols]).unwrap();
    let chain = g.max_over_axis(e, 1).unwrap();
    assert_eq!(g.value(fused), g.value(chain));

    let lf = g.sum(fused).unwrap();
    let lc = g.sum(chain).unwrap();
    let gf = g.backward(lf).unwrap();
    let gc = g.backward(lc).unwrap();
    for id in [ic, in_, ib] {
        assert_eq!(gf.get(id), gc.get(id));
    }
}

#[test]
fn axis_reduction_gradients() {
    run("max_over_axis", |rng| {
        let axis = rng.random_range(0..3);
        let x = random_array(rng, &[3, 4, 2]);
        check(
            move |g, v| {
                let y = g.max_over_axis(v[0], axis).unwrap();
                readout(g, y, 8)
            },
            vec![x],
        )
    });
    run("mean_over_axis", |rng| {
        let axis = rng.random_range(0..3);
        let x = random_array(rng, &[3, 4, 2]);
        check(
            move |g, v| {
                let y = g.mean_over_axis(v[0], axis).unwrap();
                readout(g, y, 9)
            },
            vec![x],
        )
    });
    run("sum", |rng| {
        let x = random_array(rng, &[3, 3]);
        check(
            |g, v| {
                let r = g.relu(v[0]).unwrap();
                g.sum(r).unwrap()
            },
            vec![x],
        )
    });
}

#[test]
fn loss_gradients() {
    run("softmax_cross_entropy", |rng| {
        let rows = rng.random_range(1..6);
        let classes = rng.random_range(2..6);
        let mut x = random_array(rng, &[rows, classes]);
        x.data_mut().iter_mut().for_each(|v| *v *= 4.0);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        check(move |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap(), vec![x])
    });
    run("mse", |rng| {
        let p = random_array(rng, &[6, 4]);
        let t = random_array(rng, &[6, 4]);
        let mut mask: Vec<bool> = (0..6).map(|_| rng.random_range(0.0..1.0) < 0.7).collect();
        mask[0] = true;
        check(move |g, v| g.mse(v[0], v[1], Some(&mask)).unwrap(), vec![p, t])
    });
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = random_array(&mut rng, &[4, 5]);
    let b = random_array(&mut rng, &[5, 3]);
    let mut g = Graph::new();
    let (ia, ib) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(ia, ib).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mut expect = 0.0;
            for l in 0..5 {
                expect += a.data()[i * 5 + l] * b.data()[l * 3 + j];
            }
            let got = g.value(c).data()[i * 3 + j];
            assert!((got - expect).abs() < 1e-12, "({i},{j}) {got} vs {expect}");
        }
    }
}
