use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, WeightedIndex};

use crate::numeric::sigmoid;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;

const NOISE_PI: [f64; 11] = [0.062, 0.128, 0.177, 0.001, 0.032, 0.273, 0.062, 0.033, 0.067, 0.022, 0.142];
const NOISE_MU: [f64; 11] = [0.508, -2.059, 1.355, -0.675, 0.504, 0.358, -0.332, -0.647, 2.029, -0.294, 0.868];
const NOISE_SIGMA: [f64; 11] = [0.274, 0.276, 0.067, 0.131, 0.028, 0.008, 0.024, 0.002, 0.008, 0.083, 0.574];

/// 11-component Gaussian mixture mapped through the logistic function.
#[derive(Debug, Clone)]
pub struct MixtureNoise {
    pi: Vec<f64>,
    components: Vec<Normal<f64>>,
    picker: WeightedIndex<f64>,
}

impl Default for MixtureNoise {
    fn default() -> Self {
        let total: f64 = NOISE_PI.iter().sum();
        let pi: Vec<f64> = NOISE_PI.iter().map(|p| p / total).collect();
        let components = NOISE_MU
            .iter()
            .zip(NOISE_SIGMA)
            .map(|(&m, s)| Normal::new(m, s).unwrap())
            .collect();
        let picker = WeightedIndex::new(&pi).unwrap();
        Self { pi, components, picker }
    }
}

impl MixtureNoise {
    pub fn weights(&self) -> &[f64] {
        &self.pi
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let k = self.picker.sample(rng);
        sigmoid(self.components[k].sample(rng))
    }
}

/// Pendulum angle (θ = 0 upright) and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn observe(&self) -> [f64; 3] {
        [self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn from_observation(obs: &[f64]) -> Self {
        Self {
            theta: obs[1].atan2(obs[0]),
            theta_dot: obs[2],
        }
    }
}

/// Deterministic update under an applied torque.
pub fn integrate(s: PendulumState, torque: f64) -> PendulumState {
    let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
    let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * s.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let theta_dot = (s.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let theta = s.theta + theta_dot * DT;
    PendulumState { theta, theta_dot }
}

/// Steps with commanded action `a`; the applied torque is a + a_max·ε.
pub fn pendulum_step(s: PendulumState, a: f64, noise: Option<&MixtureNoise>, rng: &mut dyn RngCore) -> PendulumState {
    let eps = noise.map_or(0.0, |n| n.sample(rng));
    integrate(s, a + MAX_TORQUE * eps)
}

pub fn random_state(rng: &mut dyn RngCore) -> PendulumState {
    PendulumState {
        theta: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        theta_dot: rng.gen_range(-1.0..1.0),
    }
}

pub fn random_action(rng: &mut dyn RngCore) -> f64 {
    rng.gen_range(-MAX_TORQUE..=MAX_TORQUE)
}

/// Energy pumping away from the top, PD control near it.
pub fn heuristic_action(s: PendulumState) -> f64 {
    let a = if s.theta.cos() > 0.9 {
        -(10.0 * s.theta.sin() + 2.0 * s.theta_dot)
    } else if s.theta_dot >= 0.0 {
        MAX_TORQUE
    } else {
        -MAX_TORQUE
    };
    a.clamp(-MAX_TORQUE, MAX_TORQUE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upright_rest_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = PendulumState { theta: 0.0, theta_dot: 0.0 };
        assert_eq!(pendulum_step(s, 0.0, None, &mut rng), s);
    }

    #[test]
    fn speed_is_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = MixtureNoise::default();
        let mut s = random_state(&mut rng);
        for _ in 0..10_000 {
            s = pendulum_step(s, random_action(&mut rng), Some(&noise), &mut rng);
            assert!(s.theta_dot.abs() <= MAX_SPEED);
        }
    }

    #[test]
    fn noise_in_unit_interval() {
        let noise = MixtureNoise::default();
        assert!((noise.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..200_000).map(|_| noise.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&e| e > 0.0 && e < 1.0));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let reference = (0..1_000_000).map(|_| noise.sample(&mut rng)).sum::<f64>() / 1e6;
        assert!((mean - reference).abs() < 0.003);
    }

    #[test]
    fn noisy_next_speed_is_multimodal() {
        let noise = MixtureNoise::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = PendulumState { theta: 1.0, theta_dot: 0.0 };
        let mut hist = [0usize; 40];
        let lo = 0.6;
        let width = 0.01;
        for _ in 0..50_000 {
            let next = pendulum_step(s, 0.0, Some(&noise), &mut rng).theta_dot;
            let b = ((next - lo) / width).floor();
            if (0.0..40.0).contains(&b) {
                hist[b as usize] += 1;
            }
        }
        let peaks = (1..39)
            .filter(|&i| hist[i] > hist[i - 1] && hist[i] >= hist[i + 1] && hist[i] > 500)
            .count();
        assert!(peaks >= 2, "{hist:?}");
    }
}
