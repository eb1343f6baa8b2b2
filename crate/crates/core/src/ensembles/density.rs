use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffcore::Mat;
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::numeric::logsumexp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NflowsOut,
    NflowsBase,
    /// Single unmasked flow.
    Nflows,
    Pne,
    McDropout,
    Gp,
    /// Hand-built Gaussian mixtures used as oracles.
    Fixed,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::NflowsOut,
        ModelKind::NflowsBase,
        ModelKind::Nflows,
        ModelKind::Pne,
        ModelKind::McDropout,
        ModelKind::Gp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NflowsOut => "nflows_out",
            ModelKind::NflowsBase => "nflows_base",
            ModelKind::Nflows => "nflows",
            ModelKind::Pne => "pne",
            ModelKind::McDropout => "mc_dropout",
            ModelKind::Gp => "gp",
            ModelKind::Fixed => "fixed",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .iter()
            .chain(std::iter::once(&ModelKind::Fixed))
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// How a model's uncertainty is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    McOutputSpace,
    AnalyticBase,
    GpClosedForm,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::McOutputSpace => "mc_output_space",
            EstimatorKind::AnalyticBase => "analytic_base",
            EstimatorKind::GpClosedForm => "gp_closed_form",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shared bijection view of a model whose components differ only in the
/// base Gaussian.
pub trait BaseSpace {
    fn base_components(&self, x: &[f64]) -> Result<Vec<DiagGaussian>>;

    /// Base points → outputs, with log|dy/db| per row.
    fn to_output(&self, x: &[f64], b: &Mat) -> Result<(Mat, Vec<f64>)>;

    /// Outputs → base points, with log|db/dy| per row.
    fn to_base(&self, x: &[f64], y: &Mat) -> Result<(Mat, Vec<f64>)>;
}

/// Equally weighted mixture of `M` conditional densities p_w(y|x).
pub trait ConditionalDensity: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize;
    fn n_components(&self) -> usize;

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>>;

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat>;

    /// log (1/M) Σ_w p_w(y|x) per row.
    fn mixture_log_prob(&self, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        mixture_log_prob_by_components(self, x, ys)
    }

    /// Picks a component uniformly per point, then samples it.
    fn mixture_sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        mixture_sample_by_components(self, x, n, rng)
    }

    fn weights(&self) -> Vec<f64> {
        let m = self.n_components();
        vec![1.0 / m as f64; m]
    }

    /// Per-component Gaussians in output space, for Gaussian-likelihood
    /// models.
    fn gaussian_components(&self, _x: &[f64]) -> Option<Result<Vec<DiagGaussian>>> {
        None
    }

    /// [`Self::gaussian_components`] for every row of `xs` at once, indexed
    /// `[row][component]`.
    fn gaussian_components_batch(&self, _xs: &Mat) -> Option<Result<Vec<Vec<DiagGaussian>>>> {
        None
    }

    fn base_space(&self) -> Option<&dyn BaseSpace> {
        None
    }

    /// `(total, aleatoric)` entropies in closed form, when available.
    fn closed_form_entropies(&self, _x: &[f64]) -> Option<Result<(f64, f64)>> {
        None
    }

    fn estimator(&self) -> EstimatorKind {
        EstimatorKind::McOutputSpace
    }

    /// Whether aleatoric entropy is taken from [`Self::gaussian_components`]
    /// instead of per-component sampling.
    fn aleatoric_closed_form(&self) -> bool {
        false
    }
}

pub(crate) fn check_component(w: usize, m: usize) -> Result<()> {
    if w >= m {
        return Err(Error::ComponentIndex { index: w, count: m });
    }
    Ok(())
}

pub(crate) fn check_x(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Shape(format!("x has {} entries, expected {dim}", x.len())));
    }
    Ok(())
}

pub(crate) fn check_ys(ys: &Mat, dim: usize) -> Result<()> {
    if ys.ncols() != dim {
        return Err(Error::Shape(format!("y has {} columns, expected {dim}", ys.ncols())));
    }
    Ok(())
}

pub fn mixture_log_prob_by_components<M: ConditionalDensity + ?Sized>(
    model: &M,
    x: &[f64],
    ys: &Mat,
) -> Result<Vec<f64>> {
    let m = model.n_components();
    let per: Vec<Vec<f64>> = (0..m)
        .map(|w| model.component_log_prob(w, x, ys))
        .collect::<Result<_>>()?;
    Ok(mix_rows(&per, ys.nrows()))
}

/// Row-wise log of the mean of exp over components.
pub(crate) fn mix_rows(per: &[Vec<f64>], n: usize) -> Vec<f64> {
    let ln_m = (per.len() as f64).ln();
    (0..n)
        .map(|i| logsumexp(per.iter().map(|c| c[i])) - ln_m)
        .collect()
}

pub fn mixture_sample_by_components<M: ConditionalDensity + ?Sized>(
    model: &M,
    x: &[f64],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Mat> {
    let m = model.n_components();
    let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    let mut out = Array2::zeros((n, model.y_dim()));
    for w in 0..m {
        let rows: Vec<usize> = (0..n).filter(|&i| picks[i] == w).collect();
        if rows.is_empty() {
            continue;
        }
        let s = model.component_sample(w, x, rows.len(), rng)?;
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(i).assign(&s.row(k));
        }
    }
    Ok(out)
}

/// `[component][row]` to `[row][component]`.
pub(crate) fn by_row(per_component: Vec<Vec<DiagGaussian>>) -> Vec<Vec<DiagGaussian>> {
    let n = per_component.first().map_or(0, Vec::len);
    let mut out: Vec<Vec<DiagGaussian>> = (0..n).map(|_| Vec::with_capacity(per_component.len())).collect();
    for comp in per_component {
        for (row, g) in out.iter_mut().zip(comp) {
            row.push(g);
        }
    }
    out
}

pub(crate) fn gaussian_log_probs(g: &DiagGaussian, ys: &Mat) -> Vec<f64> {
    ys.rows().into_iter().map(|r| g.log_prob(r.as_slice().unwrap_or(&r.to_vec()))).collect()
}
