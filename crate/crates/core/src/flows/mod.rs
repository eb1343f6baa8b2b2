//! Conditional normalizing flows: a conditional diagonal-Gaussian base
//! pushed through monotone rational-quadratic spline bijections.

mod model;
pub mod spline;

pub use model::{
    ConditionalGaussianBase, Cond, FlowConfig, FlowMasks, FlowModel, Normalizer, SplineBijection, SIGMA_FLOOR,
};

use rand::RngCore;

use crate::diffcore::{AdamState, Graph, Mat, ParamStore, Var};
use crate::error::Result;
use crate::training::{train, TrainConfig, Trainable};

struct PlainFlow<'a> {
    flow: &'a mut FlowModel,
    opt: &'a mut AdamState,
}

impl Trainable for PlainFlow<'_> {
    fn n_train_components(&self) -> usize {
        1
    }

    fn batch_loss(&self, g: &Graph, xs: &Mat, ys: &Mat, _component: usize, _rng: &mut dyn RngCore) -> Result<Var> {
        self.flow.nll_loss(g, xs, ys, &FlowMasks::none())
    }

    fn optim_parts(&mut self) -> (&mut ParamStore, &mut AdamState) {
        (self.flow.params_mut(), self.opt)
    }
}

/// Plain maximum-likelihood training of a single unmasked flow.
pub fn train_flow(
    flow: &mut FlowModel,
    opt: &mut AdamState,
    xs: &Mat,
    ys: &Mat,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    train(&mut PlainFlow { flow, opt }, xs, ys, cfg, rng)
}
