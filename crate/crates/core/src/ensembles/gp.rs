//! Exact Gaussian-process regression with an RBF kernel and constant mean,
//! one independent GP per output dimension.

use ndarray::{Array2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::density::{check_component, check_x, check_ys, gaussian_log_probs, ConditionalDensity, EstimatorKind, ModelKind};
use crate::diffcore::{Mat, ParamStore};
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::numeric::{LN_2PI, STD_NORMAL_ENTROPY};

const MAX_JITTER: f64 = 1e-6;
const MIN_LOG_NOISE: f64 = -13.8; // ln 1e-6

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    pub mean: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            signal_var: 1.0,
            noise_var: 0.1,
            mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpOptions {
    pub init: GpHyper,
    pub optimize: bool,
    pub iterations: usize,
    pub lr: f64,
    /// Standardise inputs and outputs before fitting; hyper-parameters then
    /// live in standardised units.
    pub standardize: bool,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            init: GpHyper::default(),
            optimize: true,
            iterations: 100,
            lr: 0.05,
            standardize: true,
        }
    }
}

/// Lower Cholesky factor of a dense symmetric matrix, or `None` if it is
/// not positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

fn solve_lower(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

fn solve_upper_t(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves (L Lᵀ) x = b.
fn chol_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    solve_upper_t(l, &solve_lower(l, b))
}

fn sq_dists(a: &Mat, b: &Mat) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i).iter().zip(b.row(j)).map(|(u, v)| (u - v) * (u - v)).sum()
    })
}

fn rbf(d2: &Array2<f64>, h: &GpHyper) -> Array2<f64> {
    let inv = 1.0 / (2.0 * h.lengthscale * h.lengthscale);
    d2.mapv(|d| h.signal_var * (-d * inv).exp())
}

/// Factor of K + (σ_w² + jitter) I, raising jitter up to 1e-6 if needed.
fn factor(kf: &Array2<f64>, noise: f64) -> Result<(Array2<f64>, f64)> {
    let n = kf.nrows();
    let mut jitter = 0.0;
    loop {
        let mut k = kf.clone();
        for i in 0..n {
            k[[i, i]] += noise + jitter;
        }
        if let Some(l) = cholesky(&k) {
            if jitter > 0.0 {
                log::warn!("gp: added jitter {jitter:e} to the kernel diagonal");
            }
            return Ok((l, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.0001 {
            return Err(Error::GpFit(format!(
                "kernel matrix not positive definite with jitter up to {MAX_JITTER:e}"
            )));
        }
    }
}

/// Log marginal likelihood and its gradient in
/// (log ℓ, log σ_f², log σ_w², c).
fn lml_and_grad(d2: &Array2<f64>, y: &[f64], h: &GpHyper) -> Result<(f64, [f64; 4])> {
    let n = y.len();
    let kf = rbf(d2, h);
    let (l, _) = factor(&kf, h.noise_var)?;
    let r: Vec<f64> = y.iter().map(|v| v - h.mean).collect();
    let alpha = chol_solve(&l, &r);
    let fit: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| l[[i, i]].ln()).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * LN_2PI;

    let mut kinv = Array2::<f64>::zeros((n, n));
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = chol_solve(&l, &e);
        for i in 0..n {
            kinv[[i, j]] = col[i];
        }
    }
    // 0.5 tr((ααᵀ − K⁻¹) dK)
    let mut g_ell = 0.0;
    let mut g_sf = 0.0;
    let mut g_sw = 0.0;
    let inv_l2 = 1.0 / (h.lengthscale * h.lengthscale);
    for i in 0..n {
        for j in 0..n {
            let a = alpha[i] * alpha[j] - kinv[[i, j]];
            g_sf += a * kf[[i, j]];
            g_ell += a * kf[[i, j]] * d2[[i, j]] * inv_l2;
        }
        g_sw += (alpha[i] * alpha[i] - kinv[[i, i]]) * h.noise_var;
    }
    let g_c: f64 = alpha.iter().sum();
    Ok((lml, [0.5 * g_ell, 0.5 * g_sf, 0.5 * g_sw, g_c]))
}

fn optimize(d2: &Array2<f64>, y: &[f64], init: GpHyper, iters: usize, lr: f64) -> Result<GpHyper> {
    let mut th = [init.lengthscale.ln(), init.signal_var.ln(), init.noise_var.ln(), init.mean];
    let to_h = |t: &[f64; 4]| GpHyper {
        lengthscale: t[0].exp(),
        signal_var: t[1].exp(),
        noise_var: t[2].exp(),
        mean: t[3],
    };
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = [0.0; 4];
    let mut v = [0.0; 4];
    let mut best = (f64::NEG_INFINITY, to_h(&th));
    for t in 1..=iters {
        let h = to_h(&th);
        let (lml, g) = match lml_and_grad(d2, y, &h) {
            Ok(r) => r,
            Err(_) => break,
        };
        if lml > best.0 {
            best = (lml, h);
        }
        for k in 0..4 {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / (1.0 - b1.powi(t as i32));
            let vh = v[k] / (1.0 - b2.powi(t as i32));
            th[k] += lr * mh / (vh.sqrt() + eps);
        }
        th[0] = th[0].clamp(-7.0, 7.0);
        th[1] = th[1].clamp(-12.0, 12.0);
        th[2] = th[2].clamp(MIN_LOG_NOISE, 12.0);
    }
    if let Ok((lml, _)) = lml_and_grad(d2, y, &to_h(&th)) {
        if lml > best.0 {
            best = (lml, to_h(&th));
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(Error::GpFit("marginal likelihood could not be evaluated".into()));
    }
    Ok(best.1)
}

#[derive(Debug, Clone)]
struct GpDim {
    hyper: GpHyper,
    chol: Array2<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

/// Fitted GP; one factorisation per output dimension.
#[derive(Debug, Clone)]
pub struct GpModel {
    options: GpOptions,
    x_raw: Mat,
    y_raw: Mat,
    x: Mat,
    x_shift: Vec<f64>,
    x_scale: Vec<f64>,
    y_shift: Vec<f64>,
    y_scale: Vec<f64>,
    dims: Vec<GpDim>,
}

fn col_stats(m: &Mat, on: bool) -> (Vec<f64>, Vec<f64>) {
    if !on {
        return (vec![0.0; m.ncols()], vec![1.0; m.ncols()]);
    }
    let mean = m.mean_axis(Axis(0)).unwrap().to_vec();
    let std = m.std_axis(Axis(0), 0.0).iter().map(|&s| if s > 1e-8 { s } else { 1.0 }).collect();
    (mean, std)
}

/// Fits a GP to `(xs, ys)`, optionally maximising the marginal likelihood.
pub fn gp_fit(xs: &Mat, ys: &Mat, options: &GpOptions) -> Result<GpModel> {
    if xs.nrows() < 2 || xs.nrows() != ys.nrows() {
        return Err(Error::Usage(format!(
            "gp_fit needs at least 2 matching rows, got {} and {}",
            xs.nrows(),
            ys.nrows()
        )));
    }
    let hypers = vec![options.init; ys.ncols()];
    GpModel::build(xs.clone(), ys.clone(), *options, hypers, options.optimize)
}

impl GpModel {
    fn build(x_raw: Mat, y_raw: Mat, options: GpOptions, hypers: Vec<GpHyper>, optimize_h: bool) -> Result<Self> {
        let (x_shift, x_scale) = col_stats(&x_raw, options.standardize);
        let (y_shift, y_scale) = col_stats(&y_raw, options.standardize);
        let mut x = x_raw.clone();
        for mut r in x.rows_mut() {
            for (j, v) in r.iter_mut().enumerate() {
                *v = (*v - x_shift[j]) / x_scale[j];
            }
        }
        let d2 = sq_dists(&x, &x);
        let mut dims = Vec::with_capacity(y_raw.ncols());
        for d in 0..y_raw.ncols() {
            let y: Vec<f64> = y_raw.column(d).iter().map(|v| (v - y_shift[d]) / y_scale[d]).collect();
            let hyper = if optimize_h {
                optimize(&d2, &y, hypers[d], options.iterations, options.lr)?
            } else {
                hypers[d]
            };
            let (chol, jitter) = factor(&rbf(&d2, &hyper), hyper.noise_var)?;
            let r: Vec<f64> = y.iter().map(|v| v - hyper.mean).collect();
            let alpha = chol_solve(&chol, &r);
            dims.push(GpDim {
                hyper,
                chol,
                alpha,
                jitter,
            });
        }
        Ok(Self {
            options,
            x_raw,
            y_raw,
            x,
            x_shift,
            x_scale,
            y_shift,
            y_scale,
            dims,
        })
    }

    /// Refits on new data, warm-starting the hyper-parameters.
    pub fn refit(&self, xs: &Mat, ys: &Mat) -> Result<Self> {
        let hypers = self.dims.iter().map(|d| d.hyper).collect();
        Self::build(xs.clone(), ys.clone(), self.options, hypers, self.options.optimize)
    }

    pub fn hypers(&self) -> Vec<GpHyper> {
        self.dims.iter().map(|d| d.hyper).collect()
    }

    pub fn jitter(&self) -> Vec<f64> {
        self.dims.iter().map(|d| d.jitter).collect()
    }

    pub fn options(&self) -> &GpOptions {
        &self.options
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    /// Latent predictive mean and variance per output dimension, in
    /// original units.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_x(x, self.x.ncols())?;
        let xn: Vec<f64> = x
            .iter()
            .zip(self.x_shift.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let d2: Vec<f64> = self
            .x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&xn).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let mut mean = Vec::with_capacity(self.dims.len());
        let mut var = Vec::with_capacity(self.dims.len());
        for (d, dim) in self.dims.iter().enumerate() {
            let h = &dim.hyper;
            let inv = 1.0 / (2.0 * h.lengthscale * h.lengthscale);
            let ks: Vec<f64> = d2.iter().map(|v| h.signal_var * (-v * inv).exp()).collect();
            let mu = h.mean + ks.iter().zip(&dim.alpha).map(|(a, b)| a * b).sum::<f64>();
            let v = solve_lower(&dim.chol, &ks);
            let mut s2 = h.signal_var - v.iter().map(|a| a * a).sum::<f64>();
            if s2 < 0.0 {
                if s2 > -1e-10 {
                    log::warn!("gp: clamped predictive variance {s2:e} to 0");
                } else {
                    log::warn!("gp: predictive variance {s2:e} is negative beyond round-off; clamped to 0");
                }
                s2 = 0.0;
            }
            mean.push(self.y_shift[d] + self.y_scale[d] * mu);
            var.push(s2 * self.y_scale[d] * self.y_scale[d]);
        }
        Ok((mean, var))
    }

    /// Observation noise variance per output dimension, in original units.
    pub fn noise_var(&self) -> Vec<f64> {
        self.dims
            .iter()
            .zip(&self.y_scale)
            .map(|(d, s)| d.hyper.noise_var * s * s)
            .collect()
    }

    /// Observation-space predictive N(mean, var_f + σ_w²).
    pub fn predictive(&self, x: &[f64]) -> Result<DiagGaussian> {
        let (mean, var) = self.predict(x)?;
        let std = var.iter().zip(self.noise_var()).map(|(v, n)| (v + n).sqrt()).collect();
        Ok(DiagGaussian::new(mean, std))
    }

    pub(crate) fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        let (n, k) = self.x_raw.dim();
        let dd = self.y_raw.ncols();
        let xs = store.add("gp.x", n, k);
        store.slice_values_mut(xs).copy_from_slice(self.x_raw.as_standard_layout().as_slice().unwrap());
        let ys = store.add("gp.y", n, dd);
        store.slice_values_mut(ys).copy_from_slice(self.y_raw.as_standard_layout().as_slice().unwrap());
        let hs = store.add("gp.hyper", dd, 4);
        let flat: Vec<f64> = self
            .dims
            .iter()
            .flat_map(|d| [d.hyper.lengthscale, d.hyper.signal_var, d.hyper.noise_var, d.hyper.mean])
            .collect();
        store.slice_values_mut(hs).copy_from_slice(&flat);
        store
    }

    pub(crate) fn from_store(store: &ParamStore, options: GpOptions) -> Result<Self> {
        let get = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Format(format!("gp checkpoint lacks `{name}`")))
        };
        let x = store.slice_matrix(get("gp.x")?);
        let y = store.slice_matrix(get("gp.y")?);
        let h = store.slice_matrix(get("gp.hyper")?);
        let hypers = h
            .rows()
            .into_iter()
            .map(|r| GpHyper {
                lengthscale: r[0],
                signal_var: r[1],
                noise_var: r[2],
                mean: r[3],
            })
            .collect();
        Self::build(x, y, options, hypers, false)
    }
}

impl ConditionalDensity for GpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Gp
    }

    fn x_dim(&self) -> usize {
        self.x.ncols()
    }

    fn y_dim(&self) -> usize {
        self.dims.len()
    }

    fn n_components(&self) -> usize {
        1
    }

    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        check_component(w, 1)?;
        check_ys(ys, self.dims.len())?;
        Ok(gaussian_log_probs(&self.predictive(x)?, ys))
    }

    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        check_component(w, 1)?;
        Ok(self.predictive(x)?.sample(n, rng))
    }

    fn gaussian_components(&self, x: &[f64]) -> Option<Result<Vec<DiagGaussian>>> {
        Some(self.predictive(x).map(|g| vec![g]))
    }

    /// Total from var_f + σ_w², aleatoric from σ_w².
    fn closed_form_entropies(&self, x: &[f64]) -> Option<Result<(f64, f64)>> {
        Some(self.predict(x).map(|(_, var)| {
            let noise = self.noise_var();
            let total = var
                .iter()
                .zip(&noise)
                .map(|(v, n)| STD_NORMAL_ENTROPY + 0.5 * (v + n).ln())
                .sum();
            let alea = noise.iter().map(|n| STD_NORMAL_ENTROPY + 0.5 * n.ln()).sum();
            (total, alea)
        }))
    }

    fn estimator(&self) -> EstimatorKind {
        EstimatorKind::GpClosedForm
    }

    fn aleatoric_closed_form(&self) -> bool {
        true
    }
}
