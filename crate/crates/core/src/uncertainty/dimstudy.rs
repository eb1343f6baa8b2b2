use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::total_entropy_mc;
use crate::ensembles::GaussianMixtureModel;
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::numeric::{derive_seed, mean_stderr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStudyConfig {
    pub dims: Vec<usize>,
    pub n_samples: usize,
    pub seeds: usize,
    /// Draw each standard deviation from U(0.5, 2) instead of using 1.
    pub random_scaling: bool,
    pub base_seed: u64,
}

impl Default for DimStudyConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 4, 8, 16],
            n_samples: 1000,
            seeds: 100,
            random_scaling: true,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStudyRow {
    pub d: usize,
    /// Mean over seeds of the exact entropy.
    pub analytic_entropy: f64,
    pub mc_entropy_mean: f64,
    /// Mean absolute error of the Monte-Carlo estimate.
    pub mc_entropy_err: f64,
    pub mc_entropy_err_stderr: f64,
    pub n_samples: usize,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStudyResult {
    pub rows: Vec<DimStudyRow>,
}

impl DimStudyResult {
    pub const CSV_HEADER: &'static str =
        "d,analytic_entropy,mc_entropy_mean,mc_entropy_err,mc_entropy_err_stderr,n_samples,n_seeds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.d, r.analytic_entropy, r.mc_entropy_mean, r.mc_entropy_err, r.mc_entropy_err_stderr, r.n_samples, r.n_seeds
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Monte-Carlo entropy error of zero-mean diagonal Gaussians as the
/// dimension grows, with the sample count held fixed.
pub fn mc_dimension_study(cfg: &DimStudyConfig) -> Result<DimStudyResult> {
    if cfg.seeds == 0 {
        return Err(Error::Config("dimension study needs at least one seed".into()));
    }
    if let Some(&d) = cfg.dims.iter().find(|&&d| d == 0 || d > 64) {
        return Err(Error::Config(format!("dimension {d} outside 1..=64")));
    }
    let mut dims = cfg.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let rows = dims
        .iter()
        .map(|&d| {
            let runs: Vec<(f64, f64)> = (0..cfg.seeds)
                .into_par_iter()
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.base_seed, (d as u64) << 32 | s as u64));
                    let std: Vec<f64> = (0..d)
                        .map(|_| if cfg.random_scaling { rng.gen_range(0.5..2.0) } else { 1.0 })
                        .collect();
                    let g = DiagGaussian::new(vec![0.0; d], std);
                    let exact = g.entropy();
                    let model = GaussianMixtureModel::constant(1, vec![g]);
                    let est = total_entropy_mc(&model, &[0.0], cfg.n_samples, &mut rng)?;
                    Ok((exact, est.value))
                })
                .collect::<Result<_>>()?;
            let exact: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let mc: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let err: Vec<f64> = runs.iter().map(|r| (r.1 - r.0).abs()).collect();
            let (err_mean, err_se) = mean_stderr(&err);
            Ok(DimStudyRow {
                d,
                analytic_entropy: mean_stderr(&exact).0,
                mc_entropy_mean: mean_stderr(&mc).0,
                mc_entropy_err: err_mean,
                mc_entropy_err_stderr: err_se,
                n_samples: cfg.n_samples,
                n_seeds: cfg.seeds,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DimStudyResult { rows })
}
