//! Entropy and mutual-information estimators for conditional mixtures.

mod dimstudy;
mod entropy;
mod knn;

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dimstudy::{mc_dimension_study, DimStudyConfig, DimStudyResult, DimStudyRow};
pub use entropy::{aleatoric_entropy_analytic, aleatoric_entropy_mc, total_entropy_mc, EntropyEstimate};
pub use knn::{knn_kl, DEFAULT_K};

use entropy::{finite_only, split_even};
use crate::diffcore::Mat;
use crate::ensembles::{BaseSpace, ConditionalDensity, EstimatorKind, GaussianMixtureModel, ModelKind};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, logsumexp, mean_stderr};

/// Per-point sample counts for [`epistemic_mi`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Mixture draws when aleatoric entropy is closed form.
    pub n_total: usize,
    /// Draws per component for stratified output-space estimates.
    pub n_per_component: usize,
    /// Base-space draws, split evenly over components.
    pub n_base: usize,
    /// Estimate base-space models in output space like any other flow.
    #[serde(default)]
    pub force_output_space: bool,
}

impl SamplingConfig {
    /// Per-point budgets: 1000 for base-space estimation, 5000 for flows
    /// sampled in output space and PNEs, 2500 for MC dropout.
    pub fn for_kind(kind: ModelKind, n_components: usize) -> Self {
        let m = n_components.max(1);
        let per = match kind {
            ModelKind::McDropout => 2500 / m,
            _ => 5000 / m,
        };
        Self {
            n_total: 5000,
            n_per_component: per.max(entropy::MIN_SAMPLES),
            n_base: 1000,
            force_output_space: false,
        }
    }

    pub fn for_model(model: &(impl ConditionalDensity + ?Sized)) -> Self {
        Self::for_kind(model.kind(), model.n_components())
    }

    /// Draws [`epistemic_mi`] makes at one point.
    pub fn planned_samples(&self, model: &(impl ConditionalDensity + ?Sized)) -> usize {
        match route(model, self) {
            Route::ClosedForm => 0,
            Route::Base => sample_budget(BudgetMode::Base, 1, self.n_base, model.n_components()),
            Route::AnalyticAleatoric => self.n_total,
            Route::Stratified => sample_budget(BudgetMode::Out, 1, self.n_per_component, model.n_components()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Every component sampled in output space.
    Out,
    /// One shared base-space sample.
    Base,
}

/// Total draws over `n_x` query points: `n_x·n_w·m` when every component
/// is sampled, `n_x·n_w` in base space.
pub fn sample_budget(mode: BudgetMode, n_x: usize, n_w: usize, m: usize) -> usize {
    match mode {
        BudgetMode::Out => n_x * n_w * m,
        BudgetMode::Base => n_x * n_w,
    }
}

/// Uncertainty at one query point, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub x_index: usize,
    pub total: f64,
    pub aleatoric: f64,
    /// `total - aleatoric`, never clamped.
    pub epistemic: f64,
    pub total_stderr: f64,
    pub aleatoric_stderr: f64,
    pub estimator: EstimatorKind,
    pub n_total_samples: usize,
    pub n_per_component_samples: usize,
    pub seed: u64,
}

impl UncertaintyReport {
    fn new(
        total: (f64, f64),
        aleatoric: (f64, f64),
        estimator: EstimatorKind,
        n_total_samples: usize,
        n_per_component_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let r = Self {
            x_index: 0,
            total: total.0,
            aleatoric: aleatoric.0,
            epistemic: total.0 - aleatoric.0,
            total_stderr: total.1,
            aleatoric_stderr: aleatoric.1,
            estimator,
            n_total_samples,
            n_per_component_samples,
            seed,
        };
        if ![r.total, r.aleatoric, r.epistemic].iter().all(|v| v.is_finite()) {
            return Err(Error::Estimator(format!(
                "non-finite entropies total={} aleatoric={}",
                r.total, r.aleatoric
            )));
        }
        Ok(r)
    }

    /// Standard error of the epistemic estimate, treating the two parts
    /// as independent.
    pub fn epistemic_stderr(&self) -> f64 {
        self.total_stderr.hypot(self.aleatoric_stderr)
    }

    pub const CSV_HEADER: &'static str = "x_index,total,aleatoric,epistemic,estimator,n_samples,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.x_index, self.total, self.aleatoric, self.epistemic, self.estimator, self.n_total_samples, self.seed
        )
    }
}

pub fn write_reports_csv(path: &Path, reports: &[UncertaintyReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from(UncertaintyReport::CSV_HEADER);
    body.push('\n');
    for r in reports {
        body.push_str(&r.csv_row());
        body.push('\n');
    }
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    ClosedForm,
    Base,
    AnalyticAleatoric,
    Stratified,
}

fn route(model: &(impl ConditionalDensity + ?Sized), cfg: &SamplingConfig) -> Route {
    match model.estimator() {
        EstimatorKind::GpClosedForm => Route::ClosedForm,
        EstimatorKind::AnalyticBase if model.base_space().is_some() && !cfg.force_output_space => Route::Base,
        _ if model.aleatoric_closed_form() => Route::AnalyticAleatoric,
        _ => Route::Stratified,
    }
}

/// Total, aleatoric and epistemic entropy at `x`, with the estimator
/// picked by the model. Pure given `seed`.
///
/// Base-space models draw one stratified base sample, score it under the
/// base mixture and use closed-form component entropies; the mean
/// log-Jacobian of the shared bijection, taken over the same draws, moves
/// both entropies to output space and cancels in the difference.
pub fn epistemic_mi(
    model: &(impl ConditionalDensity + ?Sized),
    x: &[f64],
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<UncertaintyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.n_components();
    match route(model, cfg) {
        Route::ClosedForm => {
            let (t, a) = model
                .closed_form_entropies(x)
                .ok_or_else(|| Error::Estimator("closed-form estimator without closed form".into()))??;
            UncertaintyReport::new((t, 0.0), (a, 0.0), EstimatorKind::GpClosedForm, 0, 0, seed)
        }
        Route::Base => {
            let space = model.base_space().expect("routed on base space");
            let est = base_space_estimate(space, x, cfg.n_base, m, &mut rng)?;
            let shift = est.mean_logdet;
            UncertaintyReport::new(
                (est.total + shift.0, est.total_stderr),
                (est.aleatoric + shift.0, shift.1),
                EstimatorKind::AnalyticBase,
                est.n_samples,
                est.n_samples / m,
                seed,
            )
        }
        Route::AnalyticAleatoric => {
            let t = total_entropy_mc(model, x, cfg.n_total, &mut rng)?;
            let a = aleatoric_entropy_analytic(model, x)?;
            UncertaintyReport::new((t.value, t.stderr), (a, 0.0), EstimatorKind::McOutputSpace, t.n_samples, 0, seed)
        }
        Route::Stratified => {
            let est = stratified_estimate(model, x, cfg.n_per_component, &mut rng)?;
            UncertaintyReport::new(
                (est.total, est.total_stderr),
                (est.aleatoric, est.aleatoric_stderr),
                EstimatorKind::McOutputSpace,
                est.n_samples,
                cfg.n_per_component,
                seed,
            )
        }
    }
}

/// [`epistemic_mi`] at every row of `xs`, in parallel, with per-row seeds
/// derived from `base_seed`. Failed rows come back as errors in place.
///
/// Gaussian-likelihood models have their component Gaussians computed for
/// all rows in one batched pass first.
pub fn evaluate_points(
    model: &(impl ConditionalDensity + ?Sized),
    xs: &Mat,
    cfg: &SamplingConfig,
    base_seed: u64,
) -> Vec<Result<UncertaintyReport>> {
    let batch = match model.gaussian_components_batch(xs) {
        Some(Ok(b)) => Some(b),
        Some(Err(e)) => {
            log::warn!("batched Gaussian components failed ({e}); scoring point by point");
            None
        }
        None => None,
    };
    (0..xs.nrows())
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            let mut r = match &batch {
                Some(b) => {
                    let mut fixed = GaussianMixtureModel::constant(model.x_dim(), b[i].clone());
                    if !model.aleatoric_closed_form() {
                        fixed = fixed.with_sampled_aleatoric();
                    }
                    epistemic_mi(&fixed, &xs.row(i).to_vec(), cfg, seed)?
                }
                None => epistemic_mi(model, &xs.row(i).to_vec(), cfg, seed)?,
            };
            r.x_index = i;
            Ok(r)
        })
        .collect()
}

struct Stratified {
    total: f64,
    total_stderr: f64,
    aleatoric: f64,
    aleatoric_stderr: f64,
    n_samples: usize,
}

/// Stratified output-space estimate: `n_w` draws per component, each
/// scored under every component once.
fn stratified_estimate(
    model: &(impl ConditionalDensity + ?Sized),
    x: &[f64],
    n_w: usize,
    rng: &mut dyn RngCore,
) -> Result<Stratified> {
    if n_w < entropy::MIN_SAMPLES {
        return Err(Error::Estimator(format!("{n_w} draws per component is below {}", entropy::MIN_SAMPLES)));
    }
    let m = model.n_components();
    let samples = entropy::stratified_sample(model, x, &vec![n_w; m], rng)?;
    let all = ndarray::concatenate(ndarray::Axis(0), &samples.iter().map(|s| s.view()).collect::<Vec<_>>())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let per: Vec<Vec<f64>> = (0..m).map(|w| model.component_log_prob(w, x, &all)).collect::<Result<_>>()?;
    let mix = crate::ensembles::mix_rows(&per, all.nrows());
    let (mut t, mut tv, mut a, mut av) = (0.0, 0.0, 0.0, 0.0);
    for w in 0..m {
        let rows = w * n_w..(w + 1) * n_w;
        let mixed = finite_only(mix[rows.clone()].to_vec(), "total entropy")?;
        let own = finite_only(per[w][rows].to_vec(), "aleatoric entropy")?;
        let (mt, st) = mean_stderr(&mixed);
        let (ma, sa) = mean_stderr(&own);
        t -= mt;
        a -= ma;
        tv += st * st;
        av += sa * sa;
    }
    let mf = m as f64;
    Ok(Stratified {
        total: t / mf,
        total_stderr: tv.sqrt() / mf,
        aleatoric: a / mf,
        aleatoric_stderr: av.sqrt() / mf,
        n_samples: n_w * m,
    })
}

struct BaseEstimate {
    total: f64,
    total_stderr: f64,
    aleatoric: f64,
    /// Mean log|dy/db| over the draws and its standard error.
    mean_logdet: (f64, f64),
    /// Per-stratum mean of log q_w(b) − log q_mix(b).
    mi_mc: f64,
    n_samples: usize,
}

fn base_space_estimate(
    space: &dyn BaseSpace,
    x: &[f64],
    n: usize,
    m: usize,
    rng: &mut dyn RngCore,
) -> Result<BaseEstimate> {
    if n < entropy::MIN_SAMPLES {
        return Err(Error::Estimator(format!("{n} base draws is below {}", entropy::MIN_SAMPLES)));
    }
    let comps = space.base_components(x)?;
    let counts = split_even(n, m);
    let ln_m = (m as f64).ln();
    let (mut t, mut tv, mut mi, mut j, mut jv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n_drawn = 0;
    for (w, &c) in counts.iter().enumerate() {
        let b = comps[w].sample(c, rng);
        n_drawn += b.nrows();
        let mut neg_mix = Vec::with_capacity(c);
        let mut gap = Vec::with_capacity(c);
        for row in b.rows() {
            let r = row.to_vec();
            let lps: Vec<f64> = comps.iter().map(|g| g.log_prob(&r)).collect();
            let lmix = logsumexp(lps.iter().copied()) - ln_m;
            neg_mix.push(-lmix);
            gap.push(lps[w] - lmix);
        }
        let (_, logdet) = space.to_output(x, &b)?;
        let neg_mix = finite_only(neg_mix, "base total entropy")?;
        let logdet = finite_only(logdet, "log-Jacobian")?;
        let (mt, st) = mean_stderr(&neg_mix);
        let (mj, sj) = mean_stderr(&logdet);
        t += mt;
        tv += st * st;
        j += mj;
        jv += sj * sj;
        mi += gap.iter().sum::<f64>() / c as f64;
    }
    let mf = m as f64;
    let aleatoric = comps.iter().map(|g| g.entropy()).sum::<f64>() / mf;
    Ok(BaseEstimate {
        total: t / mf,
        total_stderr: tv.sqrt() / mf,
        aleatoric,
        mean_logdet: (j / mf, jv.sqrt() / mf),
        mi_mc: mi / mf,
        n_samples: n_drawn,
    })
}

/// Epistemic mutual information of a base-space model estimated twice:
/// from base draws scored under the base mixture, and from independent
/// output-space draws scored through the full bijection. `n` draws each.
pub fn epistemic_base_vs_output_check(
    model: &(impl ConditionalDensity + ?Sized),
    x: &[f64],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    let space = model
        .base_space()
        .ok_or_else(|| Error::Estimator(format!("{} has no base space", model.kind())))?;
    let m = model.n_components();
    let base = base_space_estimate(space, x, n, m, rng)?;
    let out = stratified_estimate(model, x, n / m, rng)?;
    Ok((base.mi_mc, out.total - out.aleatoric))
}

#[cfg(test)]
mod tests;
