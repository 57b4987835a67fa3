//! Central finite-difference gradient checks.

use crate::array::Array;
use crate::error::Result;
use crate::graph::{Graph, NodeId};

/// `‖a - n‖ / max(‖a‖, ‖n‖, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / sq(analytic).max(sq(numeric)).max(1e-12)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Worst [`relative_error`] over the inputs of a scalar graph function.
///
/// `build` receives one parameter node per input and returns the loss node.
pub fn check_graph<F>(build: F, inputs: &[Array], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Array]| -> Result<f64> {
        let mut g = Graph::new().with_finite_checks(false);
        let ids: Vec<_> = values.iter().map(|a| g.param(a.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).data()[0])
    };
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|a| g.param(a.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut failure = None;
    for (slot, id) in ids.iter().enumerate() {
        let mut values = inputs.to_vec();
        let numeric = numeric_gradient(inputs[slot].data(), step, |x| {
            values[slot].data_mut().copy_from_slice(x);
            eval(&values).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        });
        worst = worst.max(relative_error(grads.get(*id).data(), &numeric));
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}
