use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Distance floor standing in for exact ties.
const JITTER: f64 = 1e-12;

/// Relative scale of the noise added to both sample sets when ties occur.
const TIE_NOISE: f64 = 1e-9;

pub const DEFAULT_K: usize = 5;

/// k-th smallest Euclidean distance from `row` to the rows of `set`,
/// optionally skipping index `skip`.
fn kth_distance(row: &[f64], set: &ArrayView2<f64>, k: usize, skip: Option<usize>) -> f64 {
    let mut best = vec![f64::INFINITY; k];
    for (j, other) in set.rows().into_iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let d2: f64 = row.iter().zip(other.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best[k - 1] {
            let mut i = k - 1;
            while i > 0 && best[i - 1] > d2 {
                best[i] = best[i - 1];
                i -= 1;
            }
            best[i] = d2;
        }
    }
    best[k - 1].sqrt()
}

/// k-th neighbour distance from `v` among `sorted`, starting with the
/// candidates just left (`l`) and right (`r`) of its position.
fn kth_sorted(v: f64, sorted: &[f64], mut l: isize, mut r: usize, k: usize) -> f64 {
    let mut last = f64::INFINITY;
    for _ in 0..k {
        let dl = if l >= 0 { v - sorted[l as usize] } else { f64::INFINITY };
        let dr = if r < sorted.len() { sorted[r] - v } else { f64::INFINITY };
        if dl <= dr {
            last = dl;
            l -= 1;
        } else {
            last = dr;
            r += 1;
        }
    }
    last
}

/// Exact (ρ_k, ν_k) for one-dimensional samples via sorting, in the row
/// order of `p`.
fn sorted_distances(p: ArrayView2<f64>, q: ArrayView2<f64>, k: usize) -> Vec<(f64, f64)> {
    let col = p.column(0);
    let mut order: Vec<usize> = (0..p.nrows()).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let ps: Vec<f64> = order.iter().map(|&i| col[i]).collect();
    let mut qs: Vec<f64> = q.column(0).to_vec();
    qs.sort_by(f64::total_cmp);
    let sorted: Vec<(f64, f64)> = ps
        .par_iter()
        .enumerate()
        .map(|(j, &v)| {
            let rho = kth_sorted(v, &ps, j as isize - 1, j + 1, k);
            let pos = qs.partition_point(|&u| u < v);
            (rho, kth_sorted(v, &qs, pos as isize - 1, pos, k))
        })
        .collect();
    let mut out = vec![(0.0, 0.0); sorted.len()];
    for (j, &i) in order.iter().enumerate() {
        out[i] = sorted[j];
    }
    out
}

/// Nearest-neighbour estimate of KL(P‖Q) from samples of P (rows of `p`)
/// and Q (rows of `q`).
///
/// Exact ties (point masses, clamped coordinates) are broken by adding
/// seeded noise of relative size 1e-9 to both sets.
pub fn knn_kl(p: ArrayView2<f64>, q: ArrayView2<f64>, k: usize) -> Result<f64> {
    let (n, m, d) = (p.nrows(), q.nrows(), p.ncols());
    if k == 0 || n <= k || m <= k {
        return Err(Error::Estimator(format!("knn_kl needs more than k={k} samples per side, got {n} and {m}")));
    }
    if d == 0 || q.ncols() != d {
        return Err(Error::Shape(format!("knn_kl dimensions {d} and {}", q.ncols())));
    }
    if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Estimator("knn_kl got non-finite samples".into()));
    }
    match estimate(p, q, k, false) {
        Err(Tied(_)) => {
            let scale = TIE_NOISE * (1.0 + p.iter().chain(q.iter()).fold(0.0f64, |a, v| a.max(v.abs())));
            let mut rng = ChaCha8Rng::seed_from_u64(0x6b6e6e);
            let mut jitter = |a: ArrayView2<f64>| {
                a.mapv(|v| v + scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            };
            let (pj, qj) = (jitter(p), jitter(q));
            estimate(pj.view(), qj.view(), k, true).map_err(|Tied(t)| {
                Error::Estimator(format!("{t} of {n} samples have a duplicate within distance {JITTER}"))
            })
        }
        Ok(v) => Ok(v),
    }
}

struct Tied(usize);

fn estimate(p: ArrayView2<f64>, q: ArrayView2<f64>, k: usize, jittered: bool) -> std::result::Result<f64, Tied> {
    let (n, m, d) = (p.nrows(), q.nrows(), p.ncols());
    let dists: Vec<(f64, f64)> = if d == 1 {
        sorted_distances(p, q, k)
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let row = p.row(i).to_vec();
                (kth_distance(&row, &p, k, Some(i)), kth_distance(&row, &q, k, None))
            })
            .collect()
    };
    let terms: Vec<(f64, bool)> = dists
        .into_iter()
        .map(|(rho, nu)| ((nu.max(JITTER) / rho.max(JITTER)).ln(), rho < JITTER))
        .collect();
    let tied = terms.iter().filter(|t| t.1).count();
    if (!jittered && tied > 0) || tied * 2 > n {
        return Err(Tied(tied));
    }
    if tied > 0 {
        log::warn!("knn_kl: {tied} tied neighbour distances floored at {JITTER}");
    }
    let sum: f64 = terms.iter().map(|t| t.0).sum();
    Ok(d as f64 * sum / n as f64 + (m as f64 / (n as f64 - 1.0)).ln())
}
