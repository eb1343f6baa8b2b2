use super::params::ParamStore;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for [`adam_step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update with β1=0.9, β2=0.999, ε=1e-8.
///
/// Entries whose gradient is exactly zero are skipped (moments and values
/// untouched), so parameters hidden behind a dropout mask do not drift on
/// stale momentum. Gradients are left as they are.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Shape(format!(
            "optimizer state for {} params, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    if let Some(i) = store.grads().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            name: store.name_of(i).unwrap_or("?").to_string(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powf(state.t as f64);
    let bc2 = 1.0 - BETA2.powf(state.t as f64);
    let grads = store.grads().to_vec();
    for (i, (p, &g)) in store.values_mut().iter_mut().zip(grads.iter()).enumerate() {
        if g == 0.0 {
            continue;
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}
