use rand::RngCore;

use crate::diffcore::Mat;
use crate::ensembles::ConditionalDensity;
use crate::error::{Error, Result};

/// A Monte-Carlo estimate with its standard error and draw count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

pub(crate) const MIN_SAMPLES: usize = 100;

/// Largest tolerated fraction of non-finite log-densities.
const MAX_NONFINITE: f64 = 1e-3;

/// Drops non-finite values, failing when too many are present.
pub(crate) fn finite_only(values: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let n = values.len();
    let kept: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    let bad = n - kept.len();
    if bad as f64 > MAX_NONFINITE * n as f64 || kept.len() < 2 {
        return Err(Error::Estimator(format!("{bad} of {n} log-densities non-finite in {what}")));
    }
    if bad > 0 {
        log::warn!("{what}: dropped {bad} non-finite log-densities of {n}");
    }
    Ok(kept)
}

/// Mean and standard error of the negated values.
pub(crate) fn neg_mean(values: &[f64]) -> (f64, f64) {
    let (m, se) = crate::numeric::mean_stderr(values);
    (-m, se)
}

fn check_n(n: usize, what: &str) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::Estimator(format!("{what} needs at least {MIN_SAMPLES} samples, got {n}")));
    }
    Ok(())
}

/// −(1/N) Σ log p(y_n|x) over `n` mixture samples.
pub fn total_entropy_mc(
    model: &(impl ConditionalDensity + ?Sized),
    x: &[f64],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<EntropyEstimate> {
    check_n(n, "total entropy")?;
    let ys = model.mixture_sample(x, n, rng)?;
    let lp = finite_only(model.mixture_log_prob(x, &ys)?, "total entropy")?;
    let (value, stderr) = neg_mean(&lp);
    Ok(EntropyEstimate {
        value,
        stderr,
        n_samples: n,
    })
}

/// Average over components of each component's own Monte-Carlo entropy,
/// `n_per_component` draws each.
pub fn aleatoric_entropy_mc(
    model: &(impl ConditionalDensity + ?Sized),
    x: &[f64],
    n_per_component: usize,
    rng: &mut dyn RngCore,
) -> Result<EntropyEstimate> {
    check_n(n_per_component, "aleatoric entropy")?;
    let m = model.n_components();
    let mut sum = 0.0;
    let mut var = 0.0;
    for w in 0..m {
        let ys = model.component_sample(w, x, n_per_component, rng)?;
        let lp = finite_only(model.component_log_prob(w, x, &ys)?, "aleatoric entropy")?;
        let (h, se) = neg_mean(&lp);
        sum += h;
        var += se * se;
    }
    Ok(EntropyEstimate {
        value: sum / m as f64,
        stderr: var.sqrt() / m as f64,
        n_samples: n_per_component * m,
    })
}

/// Mean closed-form Gaussian entropy of the components: in base space for
/// models with a shared bijection, otherwise in output space.
pub fn aleatoric_entropy_analytic(model: &(impl ConditionalDensity + ?Sized), x: &[f64]) -> Result<f64> {
    if let Some(b) = model.base_space() {
        return Ok(mean_entropy(&b.base_components(x)?));
    }
    if let Some(c) = model.gaussian_components(x) {
        return Ok(mean_entropy(&c?));
    }
    if let Some(h) = model.closed_form_entropies(x) {
        return Ok(h?.1);
    }
    Err(Error::Estimator(format!(
        "{} has no closed-form component entropy",
        model.kind()
    )))
}

fn mean_entropy(comps: &[crate::gaussian::DiagGaussian]) -> f64 {
    comps.iter().map(|g| g.entropy()).sum::<f64>() / comps.len() as f64
}

/// Stratified mixture sample: `counts[w]` rows from component `w`.
pub(crate) fn stratified_sample(
    model: &(impl ConditionalDensity + ?Sized),
    x: &[f64],
    counts: &[usize],
    rng: &mut dyn RngCore,
) -> Result<Vec<Mat>> {
    counts
        .iter()
        .enumerate()
        .map(|(w, &c)| model.component_sample(w, x, c, rng))
        .collect()
}

/// Splits `n` draws over `m` strata as evenly as possible.
pub(crate) fn split_even(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|w| n / m + usize::from(w < n % m)).collect()
}
