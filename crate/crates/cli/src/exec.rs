//! Pieces shared by the experiment commands.

use std::path::PathBuf;

use geoaux::geomprops::{compute_props_with, PropsConfig};
use geoaux::model::{evaluate, train, Evaluation, ModelConfig, TrainConfig, TrainOutcome};
use geoaux::pointcloud::{add_gaussian_noise, PointCloud};
use geoaux::rng::derive_seed;
use geoaux::synthdata::{gen_dataset, load_dataset, Dataset, Split, MANIFEST_FILE};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::specs::DataSource;

/// A dataset and the files it was read from, if any.
pub struct Loaded {
    pub dataset: Dataset,
    pub files: Vec<PathBuf>,
}

pub fn load_data(src: &DataSource) -> Result<Loaded> {
    match &src.dataset_dir {
        Some(dir) => Ok(Loaded {
            dataset: load_dataset(dir)?,
            files: ["train.json", "test.json", MANIFEST_FILE].iter().map(|f| dir.join(f)).collect(),
        }),
        None => Ok(Loaded {
            dataset: gen_dataset(&src.dataset)?,
            files: Vec::new(),
        }),
    }
}

/// Copy of `split` with Gaussian noise on every point and the GeoSSL labels
/// recomputed from the noisy points with `props`. Privileged labels stay
/// as they are. Each cloud draws from its own stream of `seed`.
pub fn noisy_split(split: &Split, sigma: f64, seed: u64, props: &PropsConfig) -> Result<Split> {
    let mut out = split.clone();
    for (i, rec) in out.clouds.iter_mut().enumerate() {
        let mut cloud = PointCloud::new(rec.points.clone())?;
        if sigma > 0.0 {
            cloud = add_gaussian_noise(&cloud, sigma, derive_seed(seed, &[i as u64]))?;
        }
        rec.geossl = compute_props_with(&cloud, props)?;
        rec.points = cloud.points().to_vec();
    }
    Ok(out)
}

/// Trains on the training split and evaluates on the test split.
pub fn train_and_eval(data: &Dataset, model: &ModelConfig, tcfg: &TrainConfig) -> Result<(TrainOutcome, Evaluation)> {
    let outcome = train(&data.train, model, tcfg)?;
    let eval = evaluate(&outcome.params, model, &data.test)?;
    Ok((outcome, eval))
}

/// Maps `f` over `items` on `jobs` threads (0 picks the core count),
/// keeping the input order.
pub fn pool_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Serializes rows to CSV with a header taken from the field names.
pub fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Invalid(format!("CSV buffer: {}", e.error())))
}

pub fn require_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(CliError::Invalid("seed list is empty".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn pool_keeps_order() {
        let items: Vec<u32> = (0..50).collect();
        let out = pool_map(3, &items, |x| Ok(x * 2)).unwrap();
        assert_eq!(out, (0..50).map(|x| x * 2).collect::<Vec<_>>());
        let err = pool_map(2, &items, |x| if *x == 7 { Err(CliError::Invalid("x".into())) } else { Ok(*x) });
        assert!(err.is_err());
    }

    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        seed: u64,
    }

    #[test]
    fn csv_has_header() {
        let text = String::from_utf8(csv_bytes(&[Row { lambda: 0.5, seed: 2 }]).unwrap()).unwrap();
        assert_eq!(text, "lambda,seed\n0.5,2\n");
    }
}
