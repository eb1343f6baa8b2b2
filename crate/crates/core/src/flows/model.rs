use ndarray::{Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::spline::{identity_raw_params, params_per_dim, rq_spline, RawSpline, SplineKnots};
use crate::diffcore::{DropoutMask, Graph, Mat, Mlp, MlpSpec, ParamStore, Var};
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::numeric::{softplus, softplus_inv, LN_2PI};

/// Floor added to the softplus scale of the base distribution.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub x_dim: usize,
    pub y_dim: usize,
    pub base_hidden_layers: usize,
    pub base_hidden_units: usize,
    pub cond_hidden_layers: usize,
    pub cond_hidden_units: usize,
    /// Number of spline transforms. For `y_dim > 1` each one is a pair of
    /// coupling layers with alternating halves, so every output dimension
    /// is transformed.
    pub n_transforms: usize,
    pub bins: usize,
    pub tail_bound: f64,
}

impl FlowConfig {
    pub fn new(x_dim: usize, y_dim: usize, hidden_layers: usize, hidden_units: usize, n_transforms: usize) -> Self {
        Self {
            x_dim,
            y_dim,
            base_hidden_layers: hidden_layers,
            base_hidden_units: hidden_units,
            cond_hidden_layers: hidden_layers,
            cond_hidden_units: hidden_units,
            n_transforms,
            bins: 8,
            tail_bound: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.y_dim == 0 {
            return Err(Error::Config("flow dimensions must be positive".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("spline needs at least 2 bins".into()));
        }
        if !(self.tail_bound > 0.0) {
            return Err(Error::Config("tail bound must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed per-dimension affine standardisation of inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub x_shift: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_shift: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(x_dim: usize, y_dim: usize) -> Self {
        Self {
            x_shift: vec![0.0; x_dim],
            x_scale: vec![1.0; x_dim],
            y_shift: vec![0.0; y_dim],
            y_scale: vec![1.0; y_dim],
        }
    }

    /// Column means and standard deviations of the data. Constant columns
    /// get scale 1.
    pub fn fit(xs: &Mat, ys: &Mat) -> Self {
        fn stats(m: &Mat) -> (Vec<f64>, Vec<f64>) {
            let mean = m.mean_axis(Axis(0)).unwrap().to_vec();
            let std = m.std_axis(Axis(0), 0.0).iter().map(|&s| if s > 1e-8 { s } else { 1.0 }).collect();
            (mean, std)
        }
        let (x_shift, x_scale) = stats(xs);
        let (y_shift, y_scale) = stats(ys);
        Self {
            x_shift,
            x_scale,
            y_shift,
            y_scale,
        }
    }

    pub fn norm_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_shift.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn norm_xs(&self, xs: &Mat) -> Mat {
        let mut out = xs.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.x_shift[j]) / self.x_scale[j];
            }
        }
        out
    }

    pub fn norm_ys(&self, ys: &Mat) -> Mat {
        let mut out = ys.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.y_shift[j]) / self.y_scale[j];
            }
        }
        out
    }

    pub fn denorm_ys(&self, zs: &Mat) -> Mat {
        let mut out = zs.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.y_shift[j] + self.y_scale[j] * *v;
            }
        }
        out
    }

    /// log|det| of the map from normalised to original outputs.
    pub fn log_scale(&self) -> f64 {
        self.y_scale.iter().map(|s| s.ln()).sum()
    }
}

/// Conditioning input: one `x` shared by every row, or one `x` per row.
#[derive(Debug, Clone, Copy)]
pub enum Cond<'a> {
    Shared(&'a [f64]),
    PerRow(&'a Mat),
}

/// Dropout masks applied to one ensemble component's networks.
#[derive(Debug, Clone, Default)]
pub struct FlowMasks<'a> {
    pub base: Option<&'a DropoutMask>,
    /// One entry per spline layer; missing entries mean unmasked.
    pub transforms: Vec<Option<&'a DropoutMask>>,
}

impl<'a> FlowMasks<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    fn transform(&self, i: usize) -> Option<&'a DropoutMask> {
        self.transforms.get(i).copied().flatten()
    }
}

/// x ↦ (μ, σ) with σ = softplus(s) + 1e-3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGaussianBase {
    net: Mlp,
    y_dim: usize,
}

impl ConditionalGaussianBase {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, spec: MlpSpec, rng: &mut R) -> Self {
        let y_dim = spec.output_dim / 2;
        Self {
            net: Mlp::new(store, "base", spec, rng),
            y_dim,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Makes the base emit the same (μ, σ) for every input.
    pub fn set_constant(&self, store: &mut ParamStore, mu: &[f64], sigma: &[f64]) -> Result<()> {
        if sigma.iter().any(|&s| s <= SIGMA_FLOOR) {
            return Err(Error::Usage(format!("sigma must exceed the floor {SIGMA_FLOOR}")));
        }
        let mut bias = mu.to_vec();
        bias.extend(sigma.iter().map(|s| softplus_inv(s - SIGMA_FLOOR)));
        self.net.set_constant_output(store, &bias)
    }

    /// Records μ and σ for the conditioning rows.
    pub fn graph(&self, g: &Graph, store: &ParamStore, cond: Var, mask: Option<&DropoutMask>) -> Result<(Var, Var)> {
        let out = self.net.forward_graph(g, store, cond, mask)?;
        let mu = g.cols(out, 0, self.y_dim)?;
        let sigma = g.shift(g.softplus(g.cols(out, self.y_dim, self.y_dim)?), SIGMA_FLOOR);
        Ok((mu, sigma))
    }

    /// Per-row log-density (n×1).
    pub fn log_prob_graph(g: &Graph, b: Var, mu: Var, sigma: Var) -> Result<Var> {
        let z = g.div(g.sub(b, mu)?, sigma)?;
        let per_dim = g.shift(g.sub(g.neg(g.log(sigma)), g.scale(g.square(z), 0.5))?, -0.5 * LN_2PI);
        Ok(g.sum_cols(per_dim))
    }

    /// The Gaussian at a (normalised) input.
    pub fn gaussian(&self, store: &ParamStore, x: &[f64], mask: Option<&DropoutMask>) -> Result<DiagGaussian> {
        let out = crate::diffcore::forward(&self.net, store, x, mask)?;
        let mean = out[..self.y_dim].to_vec();
        let std = out[self.y_dim..].iter().map(|&s| softplus(s) + SIGMA_FLOOR).collect();
        Ok(DiagGaussian::new(mean, std))
    }
}

/// One spline layer: transforms `active` output dims with parameters from a
/// conditioner fed `x` and the `passive` dims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBijection {
    conditioner: Mlp,
    active: Vec<usize>,
    passive: Vec<usize>,
    bins: usize,
    tail_bound: f64,
}

impl SplineBijection {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &FlowConfig,
        active: Vec<usize>,
        passive: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::new(
            cfg.x_dim + passive.len(),
            cfg.cond_hidden_layers,
            cfg.cond_hidden_units,
            active.len() * params_per_dim(cfg.bins),
        );
        let conditioner = Mlp::new(store, name, spec, rng);
        let ident: Vec<f64> = active.iter().flat_map(|_| identity_raw_params(cfg.bins)).collect();
        conditioner.set_constant_output(store, &ident)?;
        Ok(Self {
            conditioner,
            active,
            passive,
            bins: cfg.bins,
            tail_bound: cfg.tail_bound,
        })
    }

    pub fn conditioner(&self) -> &Mlp {
        &self.conditioner
    }

    pub fn active_dims(&self) -> &[usize] {
        &self.active
    }

    /// Applies the layer to the n×D block `v`. `xin` is either 1 row
    /// (shared) or n rows.
    fn apply(
        &self,
        g: &Graph,
        store: &ParamStore,
        v: Var,
        xin: Var,
        mask: Option<&DropoutMask>,
        inverse: bool,
    ) -> Result<(Var, Var)> {
        let (n, d) = g.shape(v);
        let raw = if self.passive.is_empty() {
            let out = self.conditioner.forward_graph(g, store, xin, mask)?;
            rows_to(g, out, n)?
        } else {
            let mut parts = vec![rows_to(g, xin, n)?];
            for &p in &self.passive {
                parts.push(g.cols(v, p, 1)?);
            }
            let cin = g.concat(&parts)?;
            self.conditioner.forward_graph(g, store, cin, mask)?
        };
        let k = self.bins;
        let per = params_per_dim(k);
        let mut cols: Vec<Option<Var>> = vec![None; d];
        let mut logdet: Option<Var> = None;
        for (j, &dim) in self.active.iter().enumerate() {
            let spline = RawSpline {
                widths: g.cols(raw, j * per, k)?,
                heights: g.cols(raw, j * per + k, k)?,
                derivatives: g.cols(raw, j * per + 2 * k, k - 1)?,
            };
            let (out, ld) = rq_spline(g, g.cols(v, dim, 1)?, spline, self.tail_bound, inverse)?;
            cols[dim] = Some(out);
            logdet = Some(match logdet {
                Some(acc) => g.add(acc, ld)?,
                None => ld,
            });
        }
        for &p in &self.passive {
            cols[p] = Some(g.cols(v, p, 1)?);
        }
        let cols: Vec<Var> = cols.into_iter().map(|c| c.expect("every dim assigned")).collect();
        let out = if d == 1 { cols[0] } else { g.concat(&cols)? };
        let logdet = logdet.unwrap_or_else(|| g.constant(Array2::zeros((n, 1))));
        Ok((out, logdet))
    }
}

fn rows_to(g: &Graph, v: Var, n: usize) -> Result<Var> {
    if g.shape(v).0 == n {
        Ok(v)
    } else {
        g.broadcast_rows(v, n)
    }
}

/// Runs a single-column block through `knots` (reversed when inverting),
/// accumulating log-determinants.
fn chain(knots: &[SplineKnots], mut v: Mat, inverse: bool) -> (Mat, Vec<f64>) {
    let mut ld = vec![0.0; v.nrows()];
    let n = knots.len();
    for (val, acc) in v.column_mut(0).iter_mut().zip(ld.iter_mut()) {
        for i in 0..n {
            let k = &knots[if inverse { n - 1 - i } else { i }];
            let (o, l) = k.apply(*val, inverse);
            *val = o;
            *acc += l;
        }
    }
    (v, ld)
}

fn finite_pair(v: Mat, ld: Vec<f64>, layers: usize) -> Result<(Mat, Vec<f64>)> {
    if v.iter().chain(&ld).any(|x| !x.is_finite()) {
        return Err(Error::Scoring {
            transform: layers,
            detail: "non-finite value".into(),
        });
    }
    Ok((v, ld))
}

fn ensure_finite(g: &Graph, vars: &[Var], transform: usize) -> Result<()> {
    for &v in vars {
        if g.value(v).iter().any(|x| !x.is_finite()) {
            return Err(Error::Scoring {
                transform,
                detail: "non-finite value".into(),
            });
        }
    }
    Ok(())
}

/// Conditional normalizing flow: a conditional diagonal Gaussian pushed
/// through a chain of spline bijections, then through the fixed output
/// de-standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    config: FlowConfig,
    #[serde(skip)]
    store: ParamStore,
    base: ConditionalGaussianBase,
    transforms: Vec<SplineBijection>,
    norm: Normalizer,
}

impl FlowModel {
    /// Randomly initialised conditioners whose output layers are set so every
    /// spline is the identity; the model density equals its base.
    pub fn new<R: Rng + ?Sized>(config: FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let base_spec = MlpSpec::new(
            config.x_dim,
            config.base_hidden_layers,
            config.base_hidden_units,
            2 * config.y_dim,
        );
        let base = ConditionalGaussianBase::new(&mut store, base_spec, rng);
        let mut transforms = Vec::new();
        let d = config.y_dim;
        for t in 0..config.n_transforms {
            if d == 1 {
                transforms.push(SplineBijection::new(
                    &mut store,
                    &format!("t{t}"),
                    &config,
                    vec![0],
                    vec![],
                    rng,
                )?);
            } else {
                for half in 0..2 {
                    let active: Vec<usize> = (0..d).filter(|i| i % 2 == half).collect();
                    let passive: Vec<usize> = (0..d).filter(|i| i % 2 != half).collect();
                    transforms.push(SplineBijection::new(
                        &mut store,
                        &format!("t{t}{}", ["a", "b"][half]),
                        &config,
                        active,
                        passive,
                        rng,
                    )?);
                }
            }
        }
        let norm = Normalizer::identity(config.x_dim, config.y_dim);
        Ok(Self {
            config,
            store,
            base,
            transforms,
            norm,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn replace_params(&mut self, store: ParamStore) -> Result<()> {
        if store.slices() != self.store.slices() {
            return Err(Error::Format("parameter layout does not match the flow topology".into()));
        }
        self.store = store;
        Ok(())
    }

    pub fn base(&self) -> &ConditionalGaussianBase {
        &self.base
    }

    pub fn transforms(&self) -> &[SplineBijection] {
        &self.transforms
    }

    pub fn n_layers(&self) -> usize {
        self.transforms.len()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn set_normalizer(&mut self, norm: Normalizer) -> Result<()> {
        if norm.x_shift.len() != self.config.x_dim || norm.y_shift.len() != self.config.y_dim {
            return Err(Error::Shape("normalizer dimensions do not match the flow".into()));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn x_dim(&self) -> usize {
        self.config.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.config.y_dim
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.x_dim {
            return Err(Error::Shape(format!("x has {} entries, expected {}", x.len(), self.config.x_dim)));
        }
        Ok(())
    }

    fn check_ys(&self, ys: &Mat) -> Result<()> {
        if ys.ncols() != self.config.y_dim {
            return Err(Error::Shape(format!("y has {} columns, expected {}", ys.ncols(), self.config.y_dim)));
        }
        Ok(())
    }

    /// Normalised conditioning block (1 row if shared).
    pub(crate) fn cond_var(&self, g: &Graph, cond: Cond<'_>, n: usize) -> Result<Var> {
        match cond {
            Cond::Shared(x) => {
                self.check_x(x)?;
                let xn = self.norm.norm_x(x);
                Ok(g.constant(Array2::from_shape_vec((1, xn.len()), xn).unwrap()))
            }
            Cond::PerRow(xs) => {
                if xs.nrows() != n || xs.ncols() != self.config.x_dim {
                    return Err(Error::Shape(format!(
                        "conditioning block {:?}, expected ({n}, {})",
                        xs.dim(),
                        self.config.x_dim
                    )));
                }
                Ok(g.constant(self.norm.norm_xs(xs)))
            }
        }
    }

    /// Base (μ, σ) rows for the conditioning block, broadcast to `n`.
    pub(crate) fn base_graph(&self, g: &Graph, xin: Var, n: usize, mask: Option<&DropoutMask>) -> Result<(Var, Var)> {
        let (mu, sigma) = self.base.graph(g, &self.store, xin, mask)?;
        Ok((rows_to(g, mu, n)?, rows_to(g, sigma, n)?))
    }

    /// Normalised output space → base space.
    pub(crate) fn inverse_graph(&self, g: &Graph, z: Var, xin: Var, masks: &FlowMasks<'_>) -> Result<(Var, Var)> {
        let n = g.shape(z).0;
        let mut v = z;
        let mut logdet = g.constant(Array2::zeros((n, 1)));
        for (i, t) in self.transforms.iter().enumerate().rev() {
            let (out, ld) = t.apply(g, &self.store, v, xin, masks.transform(i), true)?;
            ensure_finite(g, &[out, ld], i)?;
            v = out;
            logdet = g.add(logdet, ld)?;
        }
        Ok((v, logdet))
    }

    /// Base space → normalised output space.
    pub(crate) fn forward_graph(&self, g: &Graph, b: Var, xin: Var, masks: &FlowMasks<'_>) -> Result<(Var, Var)> {
        let n = g.shape(b).0;
        let mut v = b;
        let mut logdet = g.constant(Array2::zeros((n, 1)));
        for (i, t) in self.transforms.iter().enumerate() {
            let (out, ld) = t.apply(g, &self.store, v, xin, masks.transform(i), false)?;
            ensure_finite(g, &[out, ld], i)?;
            v = out;
            logdet = g.add(logdet, ld)?;
        }
        Ok((v, logdet))
    }

    /// Per-row log p(y|x) in original units (n×1).
    pub fn log_prob_graph(&self, g: &Graph, cond: Cond<'_>, ys: &Mat, masks: &FlowMasks<'_>) -> Result<Var> {
        self.check_ys(ys)?;
        let n = ys.nrows();
        let xin = self.cond_var(g, cond, n)?;
        let z = g.constant(self.norm.norm_ys(ys));
        let (b, ld) = self.inverse_graph(g, z, xin, masks)?;
        let (mu, sigma) = self.base_graph(g, xin, n, masks.base)?;
        let lp = ConditionalGaussianBase::log_prob_graph(g, b, mu, sigma)?;
        ensure_finite(g, &[lp], self.transforms.len())?;
        Ok(g.shift(g.add(lp, ld)?, -self.norm.log_scale()))
    }

    pub fn log_prob_batch(&self, cond: Cond<'_>, ys: &Mat, masks: &FlowMasks<'_>) -> Result<Vec<f64>> {
        if ys.nrows() == 0 {
            return Ok(Vec::new());
        }
        if let Some(knots) = self.shared_knots(cond, masks)? {
            self.check_ys(ys)?;
            let Cond::Shared(x) = cond else { unreachable!("knots need a shared input") };
            let base = self.base_gaussian(x, masks.base)?;
            let (z, ld) = chain(&knots, self.norm.norm_ys(ys), true);
            let shift = self.norm.log_scale();
            let lp: Vec<f64> = z.iter().zip(ld).map(|(&b, l)| base.log_prob(&[b]) + l - shift).collect();
            if lp.iter().any(|v| !v.is_finite()) {
                return Err(Error::Scoring {
                    transform: self.transforms.len(),
                    detail: "non-finite value".into(),
                });
            }
            return Ok(lp);
        }
        let g = Graph::new();
        let lp = self.log_prob_graph(&g, cond, ys, masks)?;
        let v = g.value(lp).column(0).to_vec();
        Ok(v)
    }

    /// log p(y|x) for one pair, unmasked.
    pub fn log_prob(&self, y: &[f64], x: &[f64]) -> Result<f64> {
        let ys = Array2::from_shape_vec((1, y.len()), y.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.log_prob_batch(Cond::Shared(x), &ys, &FlowMasks::none())?[0])
    }

    /// Mean negative log-likelihood of a batch; differentiable in every
    /// parameter the masks leave active.
    pub fn nll_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, masks: &FlowMasks<'_>) -> Result<Var> {
        if ys.nrows() == 0 {
            return Err(Error::Usage("nll_loss on an empty batch".into()));
        }
        let lp = self.log_prob_graph(g, Cond::PerRow(xs), ys, masks)?;
        Ok(g.neg(g.mean(lp)))
    }

    /// Base points → outputs in original units with log|dy/db|.
    pub fn forward_transform(&self, b: &Mat, cond: Cond<'_>, masks: &FlowMasks<'_>) -> Result<(Mat, Vec<f64>)> {
        self.check_ys(b)?;
        if let Some(knots) = self.shared_knots(cond, masks)? {
            let (z, ld) = chain(&knots, b.clone(), false);
            let shift = self.norm.log_scale();
            return finite_pair(self.norm.denorm_ys(&z), ld.into_iter().map(|v| v + shift).collect(), knots.len());
        }
        let g = Graph::new();
        let xin = self.cond_var(&g, cond, b.nrows())?;
        let (z, ld) = self.forward_graph(&g, g.constant(b.clone()), xin, masks)?;
        let y = self.norm.denorm_ys(&g.value(z));
        let shift = self.norm.log_scale();
        let ld = g.value(ld).column(0).iter().map(|v| v + shift).collect();
        Ok((y, ld))
    }

    /// Outputs in original units → base points with log|db/dy|.
    pub fn inverse_transform(&self, y: &Mat, cond: Cond<'_>, masks: &FlowMasks<'_>) -> Result<(Mat, Vec<f64>)> {
        self.check_ys(y)?;
        if let Some(knots) = self.shared_knots(cond, masks)? {
            let (b, ld) = chain(&knots, self.norm.norm_ys(y), true);
            let shift = self.norm.log_scale();
            return finite_pair(b, ld.into_iter().map(|v| v - shift).collect(), knots.len());
        }
        let g = Graph::new();
        let xin = self.cond_var(&g, cond, y.nrows())?;
        let z = g.constant(self.norm.norm_ys(y));
        let (b, ld) = self.inverse_graph(&g, z, xin, masks)?;
        let shift = self.norm.log_scale();
        let ld = g.value(ld).column(0).iter().map(|v| v - shift).collect();
        let b = g.value(b).clone();
        Ok((b, ld))
    }

    /// Plain spline knots per layer when the input is shared and every layer
    /// conditions on `x` alone (one output dimension), else `None`.
    fn shared_knots(&self, cond: Cond<'_>, masks: &FlowMasks<'_>) -> Result<Option<Vec<SplineKnots>>> {
        let Cond::Shared(x) = cond else { return Ok(None) };
        if self.config.y_dim != 1 || self.transforms.iter().any(|t| !t.passive.is_empty()) {
            return Ok(None);
        }
        self.check_x(x)?;
        let xn = self.norm.norm_x(x);
        self.transforms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let raw = crate::diffcore::forward(&t.conditioner, &self.store, &xn, masks.transform(i))?;
                Ok(SplineKnots::new(&raw, t.bins, t.tail_bound))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// The base Gaussian at `x` (base space).
    pub fn base_gaussian(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<DiagGaussian> {
        self.check_x(x)?;
        self.base.gaussian(&self.store, &self.norm.norm_x(x), mask)
    }

    /// Draws `n` base points at `x` and pushes them through the chain.
    pub fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore, masks: &FlowMasks<'_>) -> Result<Mat> {
        let base = self.base_gaussian(x, masks.base)?;
        if n == 0 {
            return Ok(Array2::zeros((0, self.y_dim())));
        }
        let b = base.sample(n, rng);
        Ok(self.forward_transform(&b, Cond::Shared(x), masks)?.0)
    }
}
