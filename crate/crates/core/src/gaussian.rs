use ndarray::Array2;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numeric::{LN_2PI, STD_NORMAL_ENTROPY};

/// Diagonal Gaussian N(mean, diag(std²)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        debug_assert_eq!(mean.len(), std.len());
        Self { mean, std }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, y: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(y)
            .map(|((m, s), v)| {
                let z = (v - m) / s;
                -0.5 * LN_2PI - s.ln() - 0.5 * z * z
            })
            .sum()
    }

    /// Differential entropy in nats, 0.5·ln det(2πe·Σ).
    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| STD_NORMAL_ENTROPY + s.ln()).sum()
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                row[j] = self.mean[j] + self.std[j] * z;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_closed_forms() {
        assert!((DiagGaussian::standard(1).entropy() - 1.41894).abs() < 1e-5);
        let g = DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 2.0]);
        let expected = 0.5 * ((2.0 * std::f64::consts::PI * std::f64::consts::E).powi(2) * 4.0).ln();
        assert!((g.entropy() - expected).abs() < 1e-12);
        assert!((expected - 3.5310).abs() < 1e-4);
    }

    #[test]
    fn log_prob_matches_formula() {
        let g = DiagGaussian::new(vec![2.0], vec![0.5]);
        assert!((g.log_prob(&[2.0]) - (-(0.5f64).ln() - 0.5 * LN_2PI)).abs() < 1e-14);
    }
}
