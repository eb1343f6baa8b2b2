//! Held-out metrics: mean kNN-KL to the true conditional, sample RMSE and
//! log-likelihood.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Mat;
use crate::ensembles::ConditionalDensity;
use crate::environments::{truth_samples, Dataset, EnvKind};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, mean_stderr};
use crate::uncertainty::{knn_kl, DEFAULT_K};

pub const DEFAULT_KL_INPUTS: usize = 50;
pub const DEFAULT_KL_SAMPLES: usize = 2000;

/// Floor applied to densities that underflow to zero.
pub const LOG_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Draws from a reference conditional, `(x, n, rng) -> n×D`.
pub type TruthSampler<'a> = dyn Fn(&[f64], usize, &mut dyn RngCore) -> Result<Mat> + Sync + 'a;

/// `n` rows of `data` picked without replacement, fixed by `seed`.
pub fn select_rows(data: &Dataset, n: usize, seed: u64) -> Result<(Mat, Mat)> {
    if data.is_empty() {
        return Err(Error::Usage("empty test set".into()));
    }
    let n = n.min(data.len());
    let idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), data.len(), n).into_vec();
    Ok((data.x.select(ndarray::Axis(0), &idx), data.y.select(ndarray::Axis(0), &idx)))
}

/// Mean kNN-KL(truth ‖ model) over the rows of `inputs`, with its
/// standard error.
pub fn eval_kl_with(
    model: &(impl ConditionalDensity + ?Sized),
    truth: &TruthSampler<'_>,
    inputs: &Mat,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if inputs.nrows() == 0 {
        return Err(Error::Usage("eval_kl needs at least one input".into()));
    }
    let kls: Vec<f64> = (0..inputs.nrows())
        .into_par_iter()
        .map(|i| {
            let x = inputs.row(i).to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let p = truth(&x, n_samples, &mut rng)?;
            let q = model.mixture_sample(&x, n_samples, &mut rng)?;
            knn_kl(p.view(), q.view(), DEFAULT_K)
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_stderr(&kls);
    if mean < -0.2 {
        log::warn!("mean KL {mean} below the estimator noise floor");
    }
    Ok((mean, se))
}

/// [`eval_kl_with`] against the environment's true conditional.
pub fn eval_kl(
    model: &(impl ConditionalDensity + ?Sized),
    env: EnvKind,
    inputs: &Mat,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    eval_kl_with(model, &|x: &[f64], n, rng: &mut dyn RngCore| truth_samples(env, x, n, rng), inputs, n_samples, seed)
}

/// Root mean squared error between recorded outputs and model draws at
/// the same inputs, `draws` draws averaged per pair (1 by default).
pub fn eval_rmse(model: &(impl ConditionalDensity + ?Sized), xs: &Mat, ys: &Mat, draws: usize, seed: u64) -> Result<f64> {
    if xs.nrows() == 0 || xs.nrows() != ys.nrows() {
        return Err(Error::Shape(format!("rmse over {} inputs and {} outputs", xs.nrows(), ys.nrows())));
    }
    let draws = draws.max(1);
    let sq: Vec<f64> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let s = model.mixture_sample(&xs.row(i).to_vec(), draws, &mut rng)?;
            let pred = s.mean_axis(ndarray::Axis(0)).expect("draws >= 1");
            Ok(pred.iter().zip(ys.row(i)).map(|(p, y)| (p - y).powi(2)).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / (xs.nrows() * ys.ncols()) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub mean: f64,
    /// Pairs whose log-density was floored.
    pub n_floored: usize,
}

/// Mean mixture log-density of held-out pairs.
pub fn eval_loglik(model: &(impl ConditionalDensity + ?Sized), xs: &Mat, ys: &Mat) -> Result<LogLik> {
    if xs.nrows() == 0 || xs.nrows() != ys.nrows() {
        return Err(Error::Shape(format!("loglik over {} inputs and {} outputs", xs.nrows(), ys.nrows())));
    }
    let lps: Vec<f64> = (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let y = Array2::from_shape_vec((1, ys.ncols()), ys.row(i).to_vec()).expect("row");
            Ok(model.mixture_log_prob(&xs.row(i).to_vec(), &y)?[0])
        })
        .collect::<Result<_>>()?;
    let mut n_floored = 0;
    let mut sum = 0.0;
    for lp in lps {
        if lp.is_nan() {
            return Err(Error::Estimator("NaN log-density in held-out set".into()));
        }
        if lp < LOG_FLOOR {
            n_floored += 1;
            sum += LOG_FLOOR;
        } else {
            sum += lp;
        }
    }
    if n_floored > 0 {
        log::warn!("{n_floored} held-out log-densities floored at ln(1e-300)");
    }
    Ok(LogLik {
        mean: sum / xs.nrows() as f64,
        n_floored,
    })
}

/// One evaluation line of an active-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub env: String,
    pub model: String,
    pub criterion: String,
    pub epoch: usize,
    pub n_train: usize,
    pub kl: f64,
    pub kl_stderr: f64,
    pub rmse: f64,
    pub loglik: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "seed,env,model,criterion,epoch,n_train,kl,kl_stderr,rmse,loglik,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.env,
            self.model,
            self.criterion,
            self.epoch,
            self.n_train,
            self.kl,
            self.kl_stderr,
            self.rmse,
            self.loglik,
            self.wall_ms
        )
    }

    pub fn to_csv(rows: &[MetricsRow]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::GaussianMixtureModel;
    use crate::gaussian::DiagGaussian;

    fn normal_model(mu: f64) -> GaussianMixtureModel {
        GaussianMixtureModel::constant(1, vec![DiagGaussian::new(vec![mu], vec![1.0])])
    }

    fn normal_truth(x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        let _ = x;
        Ok(DiagGaussian::standard(1).sample(n, rng))
    }

    fn grid(n: usize) -> Mat {
        Array2::from_shape_fn((n, 1), |(i, _)| i as f64)
    }

    #[test]
    fn oracle_model_has_zero_kl() {
        let (kl, _) = eval_kl_with(&normal_model(0.0), &normal_truth, &grid(20), 2000, 1).unwrap();
        assert!(kl.abs() < 0.05, "{kl}");
    }

    #[test]
    fn shifted_model_kl_is_half() {
        let (kl, _) = eval_kl_with(&normal_model(1.0), &normal_truth, &grid(20), 2000, 2).unwrap();
        assert!((kl - 0.5).abs() < 0.1, "{kl}");
    }

    #[test]
    fn truth_against_truth_is_near_zero() {
        for env in EnvKind::ALL {
            let truth = |x: &[f64], n, rng: &mut dyn RngCore| truth_samples(env, x, n, rng);
            let oracle = |x: &[f64], n, rng: &mut dyn RngCore| truth_samples(env, x, n, rng);
            let data = crate::environments::collect(env, crate::environments::Policy::Random, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let p_q: Vec<f64> = (0..data.len())
                .map(|i| {
                    let x = data.x.row(i).to_vec();
                    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                    let p = truth(&x, 5000, &mut rng).unwrap();
                    let q = oracle(&x, 5000, &mut rng).unwrap();
                    knn_kl(p.view(), q.view(), DEFAULT_K)
                })
                .map(|r| r.unwrap())
                .collect();
            let mean = p_q.iter().sum::<f64>() / p_q.len() as f64;
            assert!(mean.abs() <= 0.1, "{env}: {mean}");
        }
    }

    #[test]
    fn rmse_examples() {
        let exact = GaussianMixtureModel::constant(1, vec![DiagGaussian::new(vec![2.0], vec![1e-12])]);
        let xs = grid(50);
        let ys = Array2::from_elem((50, 1), 2.0);
        assert!(eval_rmse(&exact, &xs, &ys, 1, 0).unwrap() < 1e-9);
        let offset = GaussianMixtureModel::constant(1, vec![DiagGaussian::new(vec![3.0], vec![1e-12])]);
        assert!((eval_rmse(&offset, &xs, &ys, 1, 0).unwrap() - 1.0).abs() < 1e-9);
        let noisy = normal_model(2.0);
        let r = eval_rmse(&noisy, &xs, &ys, 1, 0).unwrap();
        assert!(r >= 0.0 && (r - 1.0).abs() < 0.35, "{r}");
    }

    #[test]
    fn loglik_examples() {
        let xs = grid(10);
        let ys = Array2::zeros((10, 1));
        let ll = eval_loglik(&normal_model(0.0), &xs, &ys).unwrap();
        assert!((ll.mean + 0.918_938_533_204_672_7).abs() < 1e-12);
        let far = Array2::from_elem((10, 1), 1e6);
        let ll = eval_loglik(&normal_model(0.0), &xs, &far).unwrap();
        assert_eq!(ll.n_floored, 10);
        assert!((ll.mean - 1e-300f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn loglik_is_order_invariant() {
        let model = GaussianMixtureModel::new(1, 1, 2, |x| {
            vec![DiagGaussian::new(vec![x[0]], vec![1.0]), DiagGaussian::new(vec![-x[0]], vec![2.0])]
        });
        let xs = Array2::from_shape_fn((30, 1), |(i, _)| (i as f64 * 0.37).sin());
        let ys = Array2::from_shape_fn((30, 1), |(i, _)| (i as f64 * 1.3).cos());
        let a = eval_loglik(&model, &xs, &ys).unwrap().mean;
        let rev: Vec<usize> = (0..30).rev().collect();
        let b = eval_loglik(&model, &xs.select(ndarray::Axis(0), &rev), &ys.select(ndarray::Axis(0), &rev)).unwrap().mean;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_deterministic() {
        let model = normal_model(0.5);
        let a = eval_kl_with(&model, &normal_truth, &grid(5), 500, 9).unwrap();
        let b = eval_kl_with(&model, &normal_truth, &grid(5), 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_header_matches_columns() {
        let row = MetricsRow {
            seed: 1,
            env: "hetero".into(),
            model: "pne".into(),
            criterion: "random".into(),
            epoch: 0,
            n_train: 100,
            kl: 0.5,
            kl_stderr: 0.1,
            rmse: 1.0,
            loglik: -2.0,
            wall_ms: 3,
        };
        assert_eq!(row.csv_row().split(',').count(), MetricsRow::CSV_HEADER.split(',').count());
    }
}
