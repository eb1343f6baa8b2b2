use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

/// River length (distance to the waterfall).
pub const LENGTH: f64 = 5.0;
/// River width.
pub const WIDTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WetChickenState {
    /// Position across the river.
    pub x: f64,
    /// Position downstream.
    pub y: f64,
}

impl WetChickenState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0)
    }
}

fn clamp_action(a: f64) -> f64 {
    if !(-1.0..=1.0).contains(&a) {
        log::warn!("wet chicken: action {a} clamped to [-1, 1]");
    }
    a.clamp(-1.0, 1.0)
}

/// One transition with turbulence draw `tau` in [-1, 1].
pub fn step_with_tau(s: WetChickenState, a: [f64; 2], tau: f64) -> WetChickenState {
    let (ax, ay) = (clamp_action(a[0]), clamp_action(a[1]));
    let v = 3.0 * s.x / WIDTH;
    let turb = 3.5 - v;
    let y_hat = s.y + (ay - 1.0) + v + turb * tau;
    if y_hat > LENGTH {
        return WetChickenState::origin();
    }
    let x = (s.x + ax).clamp(0.0, WIDTH);
    // ŷ below 0 is clamped as well so the state stays in the river.
    let y = if s.y + ay < 0.0 { 0.0 } else { y_hat.max(0.0) };
    WetChickenState::new(x, y)
}

pub fn wet_chicken_step(s: WetChickenState, a: [f64; 2], rng: &mut dyn RngCore) -> WetChickenState {
    let tau = rng.gen_range(-1.0..=1.0);
    step_with_tau(s, a, tau)
}

pub fn random_action(rng: &mut dyn RngCore) -> [f64; 2] {
    [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
}

/// Paddles downstream until close to the waterfall, holding position near
/// the low-drift bank.
pub fn heuristic_action(s: WetChickenState, rng: &mut dyn RngCore) -> [f64; 2] {
    let ax = (1.0 - s.x).clamp(-1.0, 1.0);
    let ay = if s.y < 2.5 { 1.0 } else { -0.5 };
    [
        (ax + rng.gen_range(-0.1..0.1)).clamp(-1.0, 1.0),
        (ay + rng.gen_range(-0.1f64..0.1)).clamp(-1.0, 1.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn case_table() {
        // x + a_x = 0 is not < 0; the o/w branch gives 0 as well.
        let s = step_with_tau(WetChickenState::new(1.0, 1.0), [-1.0, 1.0], 0.0);
        assert_eq!(s.x, 0.0);
        // waterfall: ŷ = 4.9 + 0 + 0 + 3.5 = 8.4 > 5 resets both coordinates
        let s = step_with_tau(WetChickenState::new(0.0, 4.9), [0.0, 1.0], 1.0);
        assert_eq!(s, WetChickenState::origin());
        for tau in [-1.0, -0.3, 0.0, 0.6, 1.0] {
            let s = step_with_tau(WetChickenState::new(5.0, 0.0), [0.0, 1.0], tau);
            assert_eq!(s.x, 5.0);
            assert!((2.5..=3.5).contains(&s.y), "{s:?}");
        }
        let s = step_with_tau(WetChickenState::new(2.0, 0.2), [0.0, -0.5], 0.0);
        assert_eq!(s.y, 0.0);
    }

    #[test]
    fn states_stay_in_the_river() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = WetChickenState::origin();
        for _ in 0..100_000 {
            s = wet_chicken_step(s, random_action(&mut rng), &mut rng);
            assert!((0.0..=WIDTH).contains(&s.x) && (0.0..=LENGTH).contains(&s.y));
        }
    }

    #[test]
    fn resets_near_the_edge_are_bimodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let resets = (0..n)
            .filter(|_| wet_chicken_step(WetChickenState::new(0.0, 4.0), [0.0, 1.0], &mut rng) == WetChickenState::origin())
            .count();
        let frac = resets as f64 / n as f64;
        assert!(frac > 0.05 && frac < 0.95, "{frac}");
    }
}
