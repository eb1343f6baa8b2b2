//! Monotone rational-quadratic spline on `[-B, B]` with identity tails.
//!
//! The spline is parameterised by unnormalised bin widths and heights
//! (softmax over `K` bins) and `K-1` interior knot derivatives (softplus).
//! Boundary derivatives are pinned to 1 so the spline joins the identity
//! tails smoothly.

use std::rc::Rc;

use ndarray::Array2;

use crate::diffcore::{Graph, Var};
use crate::error::Result;
use crate::numeric::softplus_inv;

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;

/// Number of raw conditioner outputs per transformed dimension.
pub fn params_per_dim(bins: usize) -> usize {
    3 * bins - 1
}

/// Raw outputs that make the spline the identity map: equal widths and
/// heights, unit derivatives.
pub fn identity_raw_params(bins: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * bins];
    v.extend(std::iter::repeat_n(softplus_inv(1.0 - MIN_DERIVATIVE), bins - 1));
    v
}

/// Unnormalised spline parameters for one transformed dimension.
#[derive(Debug, Clone, Copy)]
pub struct RawSpline {
    /// n × K
    pub widths: Var,
    /// n × K
    pub heights: Var,
    /// n × (K-1)
    pub derivatives: Var,
}

struct Knots {
    /// left knot positions, n × (K+1)
    cum: Var,
    /// bin sizes, n × K
    sizes: Var,
}

fn knots(g: &Graph, raw: Var, min_size: f64, bound: f64) -> Knots {
    let k = g.shape(raw).1 as f64;
    let p = g.shift(g.scale(g.softmax_rows(raw), 1.0 - min_size * k), min_size);
    let sizes = g.scale(p, 2.0 * bound);
    let cum = g.shift(g.cumsum_pad(sizes), -bound);
    Knots { cum, sizes }
}

/// Index of the bin containing each value: the number of interior knots at
/// or below it.
fn search_bins(cum: &Array2<f64>, vals: &Array2<f64>) -> Vec<usize> {
    let k = cum.ncols() - 1;
    (0..vals.nrows())
        .map(|r| {
            let v = vals[[r, 0]];
            (1..k).take_while(|&j| cum[[r, j]] <= v).count()
        })
        .collect()
}

fn one_minus(g: &Graph, a: Var) -> Var {
    g.shift(g.neg(a), 1.0)
}

/// Applies the spline (or its inverse) to an n×1 column.
///
/// Returns the transformed column and the log|dy/dx| of the direction that
/// was applied (so for `inverse = true` it is log|db/dy|). Values outside
/// `[-bound, bound]` pass through unchanged with zero log-determinant.
pub fn rq_spline(g: &Graph, input: Var, raw: RawSpline, bound: f64, inverse: bool) -> Result<(Var, Var)> {
    let n = g.shape(input).0;
    let (inside, clamped) = {
        let v = g.value(input);
        let inside: Vec<bool> = v.iter().map(|x| x.abs() <= bound).collect();
        let clamped = v.mapv(|x| x.clamp(-bound, bound));
        (Rc::new(inside), clamped)
    };
    let x = g.select(inside.clone(), input, g.constant(clamped))?;

    let w = knots(g, raw.widths, MIN_BIN_WIDTH, bound);
    let h = knots(g, raw.heights, MIN_BIN_HEIGHT, bound);
    let ones = g.constant(Array2::ones((n, 1)));
    let interior = g.shift(g.softplus(raw.derivatives), MIN_DERIVATIVE);
    let derivs = g.concat(&[ones, interior, ones])?;

    let idx = {
        let cum = if inverse { g.value(h.cum) } else { g.value(w.cum) };
        Rc::new(search_bins(&cum, &g.value(x)))
    };
    let idx_next = Rc::new(idx.iter().map(|i| i + 1).collect::<Vec<_>>());

    let in_cw = g.gather(w.cum, idx.clone())?;
    let in_w = g.gather(w.sizes, idx.clone())?;
    let in_ch = g.gather(h.cum, idx.clone())?;
    let in_h = g.gather(h.sizes, idx.clone())?;
    let d0 = g.gather(derivs, idx)?;
    let d1 = g.gather(derivs, idx_next)?;
    let delta = g.div(in_h, in_w)?;
    // d0 + d1 - 2δ
    let sdel = g.sub(g.add(d0, d1)?, g.scale(delta, 2.0))?;

    let (out, theta) = if inverse {
        let dy = g.sub(x, in_ch)?;
        let a = g.add(g.mul(in_h, g.sub(delta, d0)?)?, g.mul(dy, sdel)?)?;
        let b = g.sub(g.mul(in_h, d0)?, g.mul(dy, sdel)?)?;
        let c = g.neg(g.mul(delta, dy)?);
        let disc = g.relu(g.sub(g.square(b), g.scale(g.mul(a, c)?, 4.0))?);
        let root = g.div(g.scale(c, 2.0), g.sub(g.neg(b), g.sqrt(disc))?)?;
        let out = g.add(g.mul(root, in_w)?, in_cw)?;
        (out, root)
    } else {
        let theta = g.div(g.sub(x, in_cw)?, in_w)?;
        let t1 = g.mul(theta, one_minus(g, theta))?;
        let num = g.mul(in_h, g.add(g.mul(delta, g.square(theta))?, g.mul(d0, t1)?)?)?;
        let den = g.add(delta, g.mul(sdel, t1)?)?;
        let out = g.add(in_ch, g.div(num, den)?)?;
        (out, theta)
    };

    let t1 = g.mul(theta, one_minus(g, theta))?;
    let den = g.add(delta, g.mul(sdel, t1)?)?;
    let dnum = g.mul(
        g.square(delta),
        g.add(
            g.add(g.mul(d1, g.square(theta))?, g.scale(g.mul(delta, t1)?, 2.0))?,
            g.mul(d0, g.square(one_minus(g, theta)))?,
        )?,
    )?;
    let logdet_fwd = g.sub(g.log(dnum), g.scale(g.log(den), 2.0))?;
    let logdet = if inverse { g.neg(logdet_fwd) } else { logdet_fwd };

    let zeros = g.constant(Array2::zeros((n, 1)));
    let out = g.select(inside.clone(), out, input)?;
    let logdet = g.select(inside, logdet, zeros)?;
    Ok((out, logdet))
}

/// The spline for one fixed parameter row, evaluated without recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineKnots {
    cw: Vec<f64>,
    w: Vec<f64>,
    ch: Vec<f64>,
    h: Vec<f64>,
    d: Vec<f64>,
    bound: f64,
}

fn plain_knots(raw: &[f64], min_size: f64, bound: f64) -> (Vec<f64>, Vec<f64>) {
    let k = raw.len() as f64;
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    let sizes: Vec<f64> = e
        .iter()
        .map(|v| ((v / sum) * (1.0 - min_size * k) + min_size) * (2.0 * bound))
        .collect();
    let mut cum = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0.0;
    cum.push(-bound);
    for s in &sizes {
        acc += s;
        cum.push(acc - bound);
    }
    (cum, sizes)
}

impl SplineKnots {
    /// `raw` holds widths, heights and interior derivatives, `3K-1` values.
    pub fn new(raw: &[f64], bins: usize, bound: f64) -> Self {
        debug_assert_eq!(raw.len(), params_per_dim(bins));
        let (cw, w) = plain_knots(&raw[..bins], MIN_BIN_WIDTH, bound);
        let (ch, h) = plain_knots(&raw[bins..2 * bins], MIN_BIN_HEIGHT, bound);
        let mut d = vec![1.0];
        d.extend(raw[2 * bins..].iter().map(|&r| crate::numeric::softplus(r) + MIN_DERIVATIVE));
        d.push(1.0);
        Self { cw, w, ch, h, d, bound }
    }

    /// Transformed value and log|derivative| of the applied direction.
    pub fn apply(&self, v: f64, inverse: bool) -> (f64, f64) {
        if !(v.abs() <= self.bound) {
            return (v, 0.0);
        }
        let k = self.w.len();
        let cum = if inverse { &self.ch } else { &self.cw };
        let i = (1..k).take_while(|&j| cum[j] <= v).count();
        let (cw, w, ch, h, d0, d1) = (self.cw[i], self.w[i], self.ch[i], self.h[i], self.d[i], self.d[i + 1]);
        let delta = h / w;
        let sdel = d0 + d1 - 2.0 * delta;
        let (out, theta) = if inverse {
            let dy = v - ch;
            let a = h * (delta - d0) + dy * sdel;
            let b = h * d0 - dy * sdel;
            let c = -delta * dy;
            let disc = (b * b - 4.0 * a * c).max(0.0);
            let root = 2.0 * c / (-b - disc.sqrt());
            (root * w + cw, root)
        } else {
            let theta = (v - cw) / w;
            let t1 = theta * (1.0 - theta);
            let num = h * (delta * theta * theta + d0 * t1);
            let den = delta + sdel * t1;
            (ch + num / den, theta)
        };
        let t1 = theta * (1.0 - theta);
        let den = delta + sdel * t1;
        let dnum = delta * delta * (d1 * theta * theta + 2.0 * delta * t1 + d0 * (1.0 - theta) * (1.0 - theta));
        let ld = dnum.ln() - 2.0 * den.ln();
        (out, if inverse { -ld } else { ld })
    }
}

/// Knot derivatives implied by raw parameters (one row per input row),
/// boundary knots included.
pub fn knot_derivatives(raw_derivatives: &Array2<f64>) -> Array2<f64> {
    let (n, k1) = raw_derivatives.dim();
    Array2::from_shape_fn((n, k1 + 2), |(r, c)| {
        if c == 0 || c == k1 + 1 {
            1.0
        } else {
            crate::numeric::softplus(raw_derivatives[[r, c - 1]]) + MIN_DERIVATIVE
        }
    })
}
