use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

use crate::diffcore::Mat;

pub const HETERO_MEANS: [f64; 3] = [-4.0, 0.0, 4.0];
pub const HETERO_STDS: [f64; 3] = [0.4, 0.9, 0.4];
const BIMODAL_RATE: f64 = 2.0;

/// y = 7 sin x + 3 z |cos(x/2)|.
pub fn hetero_y(x: f64, z: f64) -> f64 {
    7.0 * x.sin() + 3.0 * z * (x / 2.0).cos().abs()
}

/// Branch 0: 10 sin x + z; branch 1: 10 cos x + z + 20 − x.
pub fn bimodal_y(x: f64, z: f64, branch: bool) -> f64 {
    if branch {
        10.0 * x.cos() + z + 20.0 - x
    } else {
        10.0 * x.sin() + z
    }
}

pub fn hetero_x(rng: &mut dyn RngCore) -> f64 {
    let c = rng.gen_range(0..3);
    Normal::new(HETERO_MEANS[c], HETERO_STDS[c]).unwrap().sample(rng)
}

pub fn bimodal_x(rng: &mut dyn RngCore) -> f64 {
    Exp::new(BIMODAL_RATE).unwrap().sample(rng)
}

pub fn hetero_truth(x: f64, n: usize, rng: &mut dyn RngCore) -> Mat {
    Array2::from_shape_fn((n, 1), |_| hetero_y(x, StandardNormal.sample(rng)))
}

pub fn bimodal_truth(x: f64, n: usize, rng: &mut dyn RngCore) -> Mat {
    Array2::from_shape_fn((n, 1), |_| {
        let branch = rng.gen_bool(0.5);
        bimodal_y(x, StandardNormal.sample(rng), branch)
    })
}
