//! Ensemble constructions and baselines behind one conditional-density
//! interface.

mod checkpoint;
mod density;
mod fixed;
mod gaussian_nets;
pub mod gp;
mod masks;
mod nflows;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model};
pub use density::{
    mixture_log_prob_by_components, mixture_sample_by_components, BaseSpace, ConditionalDensity, EstimatorKind,
    ModelKind,
};
pub(crate) use density::mix_rows;
pub use fixed::GaussianMixtureModel;
pub use gaussian_nets::{GaussianNet, McDropoutModel, PneModel};
pub use gp::{gp_fit, GpHyper, GpModel, GpOptions};
pub use masks::MaskSet;
pub use nflows::{NflowsBaseModel, NflowsOutModel};

use crate::environments::{Dataset, EnvKind};
use crate::error::{Error, Result};
use crate::flows::FlowConfig;
use crate::training::{train, TrainConfig};

/// Components of the masked ensembles.
pub const DEFAULT_COMPONENTS: usize = 5;
pub const DEFAULT_KEEP_PROB: f64 = 0.5;
pub const MC_DROPOUT_TEST_MASKS: usize = 20;

/// Hidden layers, hidden units and number of transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub transforms: usize,
}

impl Architecture {
    pub fn new(hidden_layers: usize, hidden_units: usize, transforms: usize) -> Self {
        Self {
            hidden_layers,
            hidden_units,
            transforms,
        }
    }

    /// Per-environment defaults.
    pub fn default_for(kind: ModelKind, env: EnvKind) -> Self {
        match kind {
            ModelKind::Pne => Self::new(3, 50, 0),
            ModelKind::McDropout => Self::new(5, 400, 0),
            ModelKind::Gp | ModelKind::Fixed => Self::new(0, 0, 0),
            ModelKind::Nflows => match env {
                EnvKind::Hetero => Self::new(1, 10, 1),
                EnvKind::Bimodal | EnvKind::WetChicken => Self::new(1, 100, 1),
                EnvKind::Pendulum => Self::new(2, 10, 2),
            },
            ModelKind::NflowsOut | ModelKind::NflowsBase => match env {
                EnvKind::Hetero => Self::new(1, 20, 1),
                EnvKind::Bimodal | EnvKind::WetChicken => Self::new(1, 200, 1),
                EnvKind::Pendulum => Self::new(2, 20, 2),
            },
        }
    }
}

/// Everything needed to construct a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub x_dim: usize,
    pub y_dim: usize,
    pub arch: Architecture,
    pub components: usize,
    pub keep_prob: f64,
    pub gp: GpOptions,
}

impl ModelSpec {
    pub fn for_env(kind: ModelKind, env: EnvKind) -> Self {
        let components = match kind {
            ModelKind::Nflows | ModelKind::Gp => 1,
            ModelKind::McDropout => MC_DROPOUT_TEST_MASKS,
            _ => DEFAULT_COMPONENTS,
        };
        let keep_prob = if kind == ModelKind::Nflows { 1.0 } else { DEFAULT_KEEP_PROB };
        Self {
            kind,
            x_dim: env.x_dim(),
            y_dim: env.y_dim(),
            arch: Architecture::default_for(kind, env),
            components,
            keep_prob,
            gp: GpOptions::default(),
        }
    }

    fn flow_config(&self) -> FlowConfig {
        FlowConfig::new(
            self.x_dim,
            self.y_dim,
            self.arch.hidden_layers,
            self.arch.hidden_units,
            self.arch.transforms,
        )
    }
}

/// A model of any kind, owned.
#[derive(Debug, Clone)]
pub enum AnyModel {
    NflowsOut(NflowsOutModel),
    NflowsBase(NflowsBaseModel),
    Pne(PneModel),
    McDropout(McDropoutModel),
    /// Unfitted until the first call to [`train_ensemble`].
    Gp(Option<GpModel>, GpOptions, usize, usize),
}

impl AnyModel {
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec.kind {
            ModelKind::NflowsOut | ModelKind::Nflows => {
                let (m, keep) = if spec.kind == ModelKind::Nflows {
                    (1, 1.0)
                } else {
                    (spec.components, spec.keep_prob)
                };
                AnyModel::NflowsOut(NflowsOutModel::new(spec.flow_config(), m, keep, rng)?)
            }
            ModelKind::NflowsBase => {
                AnyModel::NflowsBase(NflowsBaseModel::new(spec.flow_config(), spec.components, spec.keep_prob, rng)?)
            }
            ModelKind::Pne => AnyModel::Pne(PneModel::new(
                spec.x_dim,
                spec.y_dim,
                spec.arch.hidden_layers,
                spec.arch.hidden_units,
                spec.components,
                spec.keep_prob,
                rng,
            )?),
            ModelKind::McDropout => AnyModel::McDropout(McDropoutModel::new(
                spec.x_dim,
                spec.y_dim,
                spec.arch.hidden_layers,
                spec.arch.hidden_units,
                spec.components,
                spec.keep_prob,
                rng,
            )?),
            ModelKind::Gp => AnyModel::Gp(None, spec.gp, spec.x_dim, spec.y_dim),
            ModelKind::Fixed => return Err(Error::Config("fixed models are built by hand".into())),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::NflowsOut(m) => m.kind(),
            AnyModel::NflowsBase(_) => ModelKind::NflowsBase,
            AnyModel::Pne(_) => ModelKind::Pne,
            AnyModel::McDropout(_) => ModelKind::McDropout,
            AnyModel::Gp(..) => ModelKind::Gp,
        }
    }

    /// The spec that rebuilds this model's topology.
    pub fn spec(&self) -> ModelSpec {
        let flow_spec = |kind, f: &crate::flows::FlowModel, m, keep_prob| {
            let c = f.config();
            ModelSpec {
                kind,
                x_dim: c.x_dim,
                y_dim: c.y_dim,
                arch: Architecture::new(c.cond_hidden_layers, c.cond_hidden_units, c.n_transforms),
                components: m,
                keep_prob,
                gp: GpOptions::default(),
            }
        };
        let net_spec = |kind, n: &GaussianNet, m, keep_prob| {
            let s = n.spec();
            ModelSpec {
                kind,
                x_dim: s.input_dim,
                y_dim: s.output_dim / 2,
                arch: Architecture::new(s.hidden_layers, s.hidden_units, 0),
                components: m,
                keep_prob,
                gp: GpOptions::default(),
            }
        };
        match self {
            AnyModel::NflowsOut(m) => flow_spec(m.kind(), m.flow(), m.n_components(), m.keep_prob()),
            AnyModel::NflowsBase(m) => flow_spec(ModelKind::NflowsBase, m.flow(), m.n_components(), m.keep_prob()),
            AnyModel::Pne(m) => net_spec(ModelKind::Pne, m.net(), m.n_components(), m.keep_prob()),
            AnyModel::McDropout(m) => net_spec(ModelKind::McDropout, m.net(), m.n_components(), m.keep_prob()),
            AnyModel::Gp(_, opts, x_dim, y_dim) => ModelSpec {
                kind: ModelKind::Gp,
                x_dim: *x_dim,
                y_dim: *y_dim,
                arch: Architecture::new(0, 0, 0),
                components: 1,
                keep_prob: 1.0,
                gp: *opts,
            },
        }
    }

    pub fn is_fitted(&self) -> bool {
        !matches!(self, AnyModel::Gp(None, ..))
    }

    /// The density view. Errors for a GP that has not seen data.
    pub fn density(&self) -> Result<&dyn ConditionalDensity> {
        Ok(match self {
            AnyModel::NflowsOut(m) => m,
            AnyModel::NflowsBase(m) => m,
            AnyModel::Pne(m) => m,
            AnyModel::McDropout(m) => m,
            AnyModel::Gp(Some(m), ..) => m,
            AnyModel::Gp(None, ..) => return Err(Error::State("gaussian process has not been fitted".into())),
        })
    }
}

/// Trains (or, for the GP, refits) on the full dataset. The first call fixes
/// the input/output standardisation from this data.
///
/// Returns the per-step loss; the GP returns its negative log marginal
/// likelihood per output dimension instead.
pub fn train_ensemble(model: &mut AnyModel, data: &Dataset, cfg: &TrainConfig, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Usage("train_ensemble on an empty dataset".into()));
    }
    let (xs, ys) = (&data.x, &data.y);
    match model {
        AnyModel::NflowsOut(m) => {
            m.ensure_normalized(xs, ys)?;
            train(m, xs, ys, cfg, rng)
        }
        AnyModel::NflowsBase(m) => {
            m.ensure_normalized(xs, ys)?;
            train(m, xs, ys, cfg, rng)
        }
        AnyModel::Pne(m) => {
            m.net_mut().ensure_normalized(xs, ys);
            train(m, xs, ys, cfg, rng)
        }
        AnyModel::McDropout(m) => {
            m.net_mut().ensure_normalized(xs, ys);
            let log = train(m, xs, ys, cfg, rng)?;
            m.redraw_test_masks(rng)?;
            Ok(log)
        }
        AnyModel::Gp(slot, opts, _, _) => {
            let fitted = match slot {
                Some(gp) => gp.refit(xs, ys)?,
                None => gp_fit(xs, ys, opts)?,
            };
            *slot = Some(fitted);
            Ok(Vec::new())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{collect, Policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_kind_builds_and_trains_on_hetero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = collect(EnvKind::Hetero, Policy::Random, 200, &mut rng).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 32,
            lr: 1e-3,
        };
        for kind in ModelKind::ALL {
            let spec = ModelSpec::for_env(kind, EnvKind::Hetero);
            let mut model = AnyModel::build(&spec, &mut rng).unwrap();
            train_ensemble(&mut model, &data, &cfg, &mut rng).unwrap();
            let d = model.density().unwrap();
            assert_eq!(d.kind(), kind);
            let lp = d.mixture_log_prob(&[0.5], &data.y.slice(ndarray::s![..5, ..]).to_owned()).unwrap();
            assert!(lp.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn masked_components_diverge_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = collect(EnvKind::Hetero, Policy::Random, 300, &mut rng).unwrap();
        let spec = ModelSpec::for_env(ModelKind::NflowsOut, EnvKind::Hetero);
        let mut model = AnyModel::build(&spec, &mut rng).unwrap();
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 32,
            lr: 5e-3,
        };
        train_ensemble(&mut model, &data, &cfg, &mut rng).unwrap();
        let AnyModel::NflowsOut(m) = &model else { unreachable!() };
        // effective parameter vector of a component: weights times its mask
        let eff = |w: usize| -> Vec<f64> {
            let masks = m.component_masks(w).unwrap();
            let mut out = Vec::new();
            for (t, layer) in m.flow().transforms().iter().enumerate() {
                let mask = masks.transforms[t].unwrap();
                let (wid, _) = layer.conditioner().layers()[0];
                let vals = m.flow().params().slice_values(wid);
                let cols = mask.layers()[0].len();
                for (i, v) in vals.iter().enumerate() {
                    out.push(if mask.layers()[0][i % cols] { *v } else { 0.0 });
                }
            }
            out
        };
        for a in 0..5 {
            for b in a + 1..5 {
                let d: f64 = eff(a).iter().zip(eff(b)).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn loss_drops_on_hetero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = collect(EnvKind::Hetero, Policy::Random, 500, &mut rng).unwrap();
        let spec = ModelSpec::for_env(ModelKind::NflowsOut, EnvKind::Hetero);
        let mut model = AnyModel::build(&spec, &mut rng).unwrap();
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 64,
            lr: 5e-3,
        };
        let log = train_ensemble(&mut model, &data, &cfg, &mut rng).unwrap();
        let head: f64 = log[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = log[log.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(head - tail > 0.5, "head {head} tail {tail}");
    }
}
