//! Minibatch gradient training shared by every neural model.

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, AdamState, Graph, Mat, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 64,
            lr: 2e-3,
        }
    }
}

/// A model that can score a minibatch under one of its training components.
pub trait Trainable {
    /// Components picked uniformly per step; 1 means no component draw.
    fn n_train_components(&self) -> usize;

    fn batch_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, component: usize, rng: &mut dyn RngCore) -> Result<Var>;

    fn optim_parts(&mut self) -> (&mut ParamStore, &mut AdamState);
}

/// Runs `cfg.steps` Adam steps. Each step picks a component uniformly (when
/// there is more than one), draws a bootstrap minibatch with replacement,
/// and updates whatever parameters the component's loss touches.
///
/// Returns the loss of every step.
pub fn train<M: Trainable + ?Sized>(
    model: &mut M,
    xs: &Mat,
    ys: &Mat,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let n = xs.nrows();
    if n == 0 || ys.nrows() != n {
        return Err(Error::Usage(format!(
            "training needs matching non-empty data, got {} inputs and {} targets",
            n,
            ys.nrows()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let m = model.n_train_components();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let w = if m > 1 { rng.gen_range(0..m) } else { 0 };
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..n)).collect();
        let bx: Array2<f64> = xs.select(Axis(0), &idx);
        let by: Array2<f64> = ys.select(Axis(0), &idx);
        let g = Graph::new();
        let loss = model.batch_loss(&g, &bx, &by, w, rng)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = g.backward(loss)?;
        let (store, opt) = model.optim_parts();
        store.zero_grads();
        grads.accumulate(&g, store);
        adam_step(store, opt, cfg.lr)?;
        log.push(value);
    }
    Ok(log)
}
