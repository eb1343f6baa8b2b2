//! Pool-based active learning: propose inputs, score them, label the best,
//! retrain, evaluate.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Mat;
use crate::ensembles::{train_ensemble, AnyModel, ConditionalDensity, ModelSpec};
use crate::environments::{collect, label, propose_candidates, Dataset, EnvKind, Policy};
use crate::error::{Error, Result};
use crate::evalmetrics::{eval_kl, eval_loglik, eval_rmse, select_rows, MetricsRow};
use crate::numeric::derive_seed;
use crate::training::TrainConfig;
use crate::uncertainty::{evaluate_points, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionCriterion {
    Epistemic,
    Aleatoric,
    Total,
    Random,
    /// Epistemic information estimated in base space; base-space models only.
    EpistemicBase,
}

impl AcquisitionCriterion {
    pub const ALL: [AcquisitionCriterion; 5] = [
        AcquisitionCriterion::Epistemic,
        AcquisitionCriterion::Aleatoric,
        AcquisitionCriterion::Total,
        AcquisitionCriterion::Random,
        AcquisitionCriterion::EpistemicBase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AcquisitionCriterion::Epistemic => "epistemic",
            AcquisitionCriterion::Aleatoric => "aleatoric",
            AcquisitionCriterion::Total => "total",
            AcquisitionCriterion::Random => "random",
            AcquisitionCriterion::EpistemicBase => "epistemic_base",
        }
    }
}

impl fmt::Display for AcquisitionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcquisitionCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown acquisition criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALConfig {
    /// Initial training-set size; `None` uses the environment default.
    pub initial_n: Option<usize>,
    pub candidates_per_epoch: usize,
    pub acquire_per_epoch: usize,
    pub epochs: usize,
    pub eval_every: usize,
    /// Also evaluate before the first acquisition (as epoch 0).
    pub eval_initial: bool,
    pub initial_train: TrainConfig,
    /// Warm-start budget after each acquisition.
    pub retrain: TrainConfig,
    /// `None` uses the per-model default.
    pub sampling: Option<SamplingConfig>,
    pub test_n: usize,
    pub kl_inputs: usize,
    pub kl_samples: usize,
    pub rmse_draws: usize,
    pub seed: u64,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            initial_n: None,
            candidates_per_epoch: 1000,
            acquire_per_epoch: 10,
            epochs: 10,
            eval_every: 1,
            eval_initial: false,
            initial_train: TrainConfig {
                steps: 2000,
                ..TrainConfig::default()
            },
            retrain: TrainConfig::default(),
            sampling: None,
            test_n: 500,
            kl_inputs: crate::evalmetrics::DEFAULT_KL_INPUTS,
            kl_samples: crate::evalmetrics::DEFAULT_KL_SAMPLES,
            rmse_draws: 1,
            seed: 0,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.acquire_per_epoch == 0 || self.acquire_per_epoch > self.candidates_per_epoch {
            return bad("acquire_per_epoch must be in 1..=candidates_per_epoch");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.initial_n == Some(0) {
            return bad("initial_n must be positive");
        }
        if self.test_n == 0 || self.kl_inputs == 0 {
            return bad("test_n and kl_inputs must be positive");
        }
        if self.kl_samples <= crate::uncertainty::DEFAULT_K {
            return bad("kl_samples must exceed the neighbour count");
        }
        for t in [&self.initial_train, &self.retrain] {
            if t.batch_size == 0 || !(t.lr > 0.0 && t.lr.is_finite()) {
                return bad("training needs a positive batch size and learning rate");
            }
        }
        Ok(())
    }
}

/// Indices picked from a candidate pool, with their scores (NaN for the
/// random criterion).
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Scores every candidate under `criterion` and keeps the `k` best, ties
/// broken by candidate index. Candidates whose estimate fails are dropped
/// with a warning. The random criterion never touches the model.
pub fn score_and_select(
    model: &(impl ConditionalDensity + ?Sized),
    candidates: &Mat,
    criterion: AcquisitionCriterion,
    k: usize,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Selection> {
    let n = candidates.nrows();
    if k > n {
        return Err(Error::Config(format!("cannot pick {k} of {n} candidates")));
    }
    if criterion == AcquisitionCriterion::Random {
        let indices = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
        return Ok(Selection {
            scores: vec![f64::NAN; indices.len()],
            indices,
        });
    }
    let mut cfg = *sampling;
    if criterion == AcquisitionCriterion::EpistemicBase {
        if model.base_space().is_none() {
            return Err(Error::Config(format!("epistemic_base needs a base-space model, not {}", model.kind())));
        }
        cfg.force_output_space = false;
    }
    let scored: Vec<Option<f64>> = evaluate_points(model, candidates, &cfg, seed)
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(r) => Some(match criterion {
                AcquisitionCriterion::Aleatoric => r.aleatoric,
                AcquisitionCriterion::Total => r.total,
                _ => r.epistemic,
            }),
            Err(e) => {
                log::warn!("candidate {i} dropped: {e}");
                None
            }
        })
        .collect();
    let mut ranked: Vec<(usize, f64)> = scored
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(Selection {
        indices: ranked.iter().map(|r| r.0).collect(),
        scores: ranked.iter().map(|r| r.1).collect(),
    })
}

/// Inputs labelled in one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionRecord {
    pub epoch: usize,
    pub x: Mat,
    pub scores: Vec<f64>,
    /// Retraining diverged and the previous parameters were kept.
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct ALResult {
    pub metrics: Vec<MetricsRow>,
    pub acquisitions: Vec<AcquisitionRecord>,
    pub dataset: Dataset,
    pub model: AnyModel,
}

impl ALResult {
    pub fn final_kl(&self) -> Option<f64> {
        self.metrics.last().map(|r| r.kl)
    }
}

// Stream indices for derived seeds.
const S_TRAIN_DATA: u64 = 1;
const S_TEST_DATA: u64 = 2;
const S_INIT: u64 = 3;
const S_EPOCH: u64 = 1 << 20;

fn epoch_seed(seed: u64, epoch: usize, stream: u64) -> u64 {
    derive_seed(seed, S_EPOCH * (epoch as u64 + 1) + stream)
}

struct Evaluator {
    env: EnvKind,
    kl_x: Mat,
    kl_y: Mat,
    test_x: Mat,
    test_y: Mat,
}

impl Evaluator {
    fn new(env: EnvKind, cfg: &ALConfig) -> Result<Self> {
        let test = collect(env, Policy::Heuristic, cfg.test_n, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, S_TEST_DATA)))?;
        let (kl_x, kl_y) = select_rows(&test, cfg.kl_inputs, derive_seed(cfg.seed, S_TEST_DATA + 100))?;
        Ok(Self {
            env,
            kl_x,
            kl_y,
            test_x: test.x,
            test_y: test.y,
        })
    }

    fn row(&self, model: &AnyModel, cfg: &ALConfig, spec: &ModelSpec, criterion: AcquisitionCriterion, epoch: usize, n_train: usize, wall_ms: u64) -> Result<MetricsRow> {
        let d = model.density()?;
        let eval_seed = epoch_seed(cfg.seed, epoch, 9);
        let (kl, kl_stderr) = eval_kl(d, self.env, &self.kl_x, cfg.kl_samples, eval_seed)?;
        let rmse = eval_rmse(d, &self.kl_x, &self.kl_y, cfg.rmse_draws, eval_seed ^ 1)?;
        let loglik = eval_loglik(d, &self.test_x, &self.test_y)?.mean;
        Ok(MetricsRow {
            seed: cfg.seed,
            env: self.env.to_string(),
            model: spec.kind.to_string(),
            criterion: criterion.to_string(),
            epoch,
            n_train,
            kl,
            kl_stderr,
            rmse,
            loglik,
            wall_ms,
        })
    }
}

/// Runs one active-learning experiment. Every random quantity derives from
/// `cfg.seed`, so results repeat exactly (apart from `wall_ms`).
pub fn run_active_learning(env: EnvKind, spec: &ModelSpec, criterion: AcquisitionCriterion, cfg: &ALConfig) -> Result<ALResult> {
    cfg.validate()?;
    if spec.x_dim != env.x_dim() || spec.y_dim != env.y_dim() {
        return Err(Error::Config(format!("model dimensions {}/{} do not fit {env}", spec.x_dim, spec.y_dim)));
    }
    let initial_n = cfg.initial_n.unwrap_or_else(|| env.initial_n());
    let mut data = collect(env, Policy::Random, initial_n, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, S_TRAIN_DATA)))?;
    let evaluator = Evaluator::new(env, cfg)?;

    let start = Instant::now();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, S_INIT));
    let mut model = AnyModel::build(spec, &mut init_rng)?;
    if criterion == AcquisitionCriterion::EpistemicBase && spec.kind != crate::ensembles::ModelKind::NflowsBase {
        return Err(Error::Config(format!("epistemic_base needs nflows_base, not {}", spec.kind)));
    }
    train_ensemble(&mut model, &data, &cfg.initial_train, &mut init_rng)?;
    let sampling = cfg.sampling.unwrap_or_else(|| SamplingConfig::for_kind(spec.kind, spec.components));

    let mut metrics = Vec::new();
    if cfg.eval_initial {
        let wall = start.elapsed().as_millis() as u64;
        metrics.push(evaluator.row(&model, cfg, spec, criterion, 0, data.len(), wall)?);
    }
    let mut acquisitions = Vec::new();
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let candidates = propose_candidates(env, cfg.candidates_per_epoch, &mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch, 0)))?;
        let sel = score_and_select(model.density()?, &candidates, criterion, cfg.acquire_per_epoch, &sampling, epoch_seed(cfg.seed, epoch, 1))?;
        let chosen = candidates.select(ndarray::Axis(0), &sel.indices);
        let ys = label(env, &chosen, &mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch, 2)))?;
        data.append(&chosen, &ys)?;

        let backup = model.clone();
        let mut train_rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch, 3));
        let failed = match train_ensemble(&mut model, &data, &cfg.retrain, &mut train_rng) {
            Ok(_) => false,
            Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } | Error::GpFit(_))) => {
                log::warn!("epoch {epoch}: retraining failed ({e}); keeping the previous model");
                model = backup;
                true
            }
            Err(e) => return Err(e),
        };
        acquisitions.push(AcquisitionRecord {
            epoch,
            x: chosen,
            scores: sel.scores,
            failed,
        });
        if epoch % cfg.eval_every == 0 {
            let wall = t0.elapsed().as_millis() as u64;
            metrics.push(evaluator.row(&model, cfg, spec, criterion, epoch, data.len(), wall)?);
        }
    }
    Ok(ALResult {
        metrics,
        acquisitions,
        dataset: data,
        model,
    })
}

#[cfg(test)]
mod tests;
