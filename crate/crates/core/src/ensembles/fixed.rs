use std::sync::Arc;

use rand::RngCore;

use super::density::{check_component, check_x, check_ys, gaussian_log_probs, ConditionalDensity, ModelKind};
use crate::diffcore::Mat;
use crate::error::Result;
use crate::gaussian::DiagGaussian;

type ComponentFn = dyn Fn(&[f64]) -> Vec<DiagGaussian> + Send + Sync;

/// Mixture of Gaussians given by a closure of `x`. Used to build models
/// with known uncertainty.
#[derive(Clone)]
pub struct GaussianMixtureModel {
    x_dim: usize,
    y_dim: usize,
    m: usize,
    components: Arc<ComponentFn>,
    closed_form_aleatoric: bool,
}

impl std::fmt::Debug for GaussianMixtureModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianMixtureModel")
            .field("x_dim", &self.x_dim)
            .field("y_dim", &self.y_dim)
            .field("m", &self.m)
            .finish()
    }
}

impl GaussianMixtureModel {
    pub fn new(
        x_dim: usize,
        y_dim: usize,
        m: usize,
        components: impl Fn(&[f64]) -> Vec<DiagGaussian> + Send + Sync + 'static,
    ) -> Self {
        Self {
            x_dim,
            y_dim,
            m,
            components: Arc::new(components),
            closed_form_aleatoric: true,
        }
    }

    /// The same components everywhere.
    pub fn constant(x_dim: usize, comps: Vec<DiagGaussian>) -> Self {
        let y_dim = comps[0].dim();
        let m = comps.len();
        Self::new(x_dim, y_dim, m, move |_| comps.clone())
    }

    /// Routes aleatoric entropy through per-component sampling instead.
    pub fn with_sampled_aleatoric(mut self) -> Self {
        self.closed_form_aleatoric = false;
        self
    }

    fn comps(&self, x: &[f64]) -> Result<Vec<DiagGaussian>> {
        check_x(x, self.x_dim)?;
        let c = (self.components)(x);
        debug_assert_eq!(c.len(), self.m);
        Ok(c)
    }
}

impl ConditionalDensity for GaussianMixtureModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Fixed
    }

    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn y_dim(&self) -> usize {
        self.y_dim
    }

    fn n_components(&self) -> usize {
        self.m
    }

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        check_component(w, self.m)?;
        check_ys(ys, self.y_dim)?;
        Ok(gaussian_log_probs(&self.comps(x)?[w], ys))
    }

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        check_component(w, self.m)?;
        Ok(self.comps(x)?[w].sample(n, rng))
    }

    fn gaussian_components(&self, x: &[f64]) -> Option<Result<Vec<DiagGaussian>>> {
        Some(self.comps(x))
    }

    fn aleatoric_closed_form(&self) -> bool {
        self.closed_form_aleatoric
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_pair_log_prob() {
        let m = GaussianMixtureModel::constant(
            1,
            vec![DiagGaussian::new(vec![0.0], vec![1.0]), DiagGaussian::new(vec![4.0], vec![1.0])],
        );
        let lp = m.mixture_log_prob(&[0.0], &array![[2.0]]).unwrap()[0];
        assert!((lp - (-2.919)).abs() < 1e-3);
        assert!((lp.exp() - 0.05399).abs() < 1e-5);
    }

    #[test]
    fn mixture_matches_average_density() {
        let m = GaussianMixtureModel::new(1, 1, 3, |x| {
            (0..3)
                .map(|w| DiagGaussian::new(vec![x[0] * w as f64], vec![0.5 + w as f64]))
                .collect()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            use rand::Rng;
            let x = [rng.gen_range(-3.0..3.0)];
            let ys = array![[rng.gen_range(-5.0..5.0)]];
            let mix = m.mixture_log_prob(&x, &ys).unwrap()[0].exp();
            let avg: f64 = (0..3)
                .map(|w| m.component_log_prob(w, &x, &ys).unwrap()[0].exp())
                .sum::<f64>()
                / 3.0;
            assert!((mix - avg).abs() < 1e-10);
        }
    }

    #[test]
    fn single_and_duplicate_components() {
        let g = DiagGaussian::new(vec![1.0], vec![2.0]);
        let ys = array![[0.3], [4.0]];
        let one = GaussianMixtureModel::constant(1, vec![g.clone()]);
        let two = GaussianMixtureModel::constant(1, vec![g.clone(), g]);
        let a = one.mixture_log_prob(&[0.0], &ys).unwrap();
        let b = one.component_log_prob(0, &[0.0], &ys).unwrap();
        let c = two.mixture_log_prob(&[0.0], &ys).unwrap();
        assert_eq!(a, b);
        for i in 0..2 {
            assert!((a[i] - c[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_sample_hits_both_means() {
        let m = GaussianMixtureModel::constant(
            1,
            vec![DiagGaussian::new(vec![0.0], vec![0.01]), DiagGaussian::new(vec![1.0], vec![0.01])],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = m.mixture_sample(&[0.0], 10_000, &mut rng).unwrap();
        let (lo, hi): (Vec<f64>, Vec<f64>) = s.column(0).iter().partition(|&&v| v < 0.5);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&lo) - 0.0).abs() < 0.01);
        assert!((mean(&hi) - 1.0).abs() < 0.01);
        assert!(lo.len() > 4500 && hi.len() > 4500);
        assert!(matches!(
            m.component_sample(2, &[0.0], 1, &mut rng),
            Err(crate::Error::ComponentIndex { index: 2, count: 2 })
        ));
    }
}
