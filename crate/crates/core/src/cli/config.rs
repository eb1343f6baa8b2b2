//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activelearn::{ALConfig, AcquisitionCriterion};
use crate::ensembles::{ModelKind, ModelSpec};
use crate::environments::{EnvKind, Policy};
use crate::error::{Error, Result};
use crate::training::TrainConfig;
use crate::uncertainty::{DimStudyConfig, SamplingConfig};

/// Every accepted key with its help line, in the order used for the
/// resolved config.
pub const KEYS: &[(&str, &str)] = &[
    ("env", "environment: hetero, bimodal, wet_chicken, pendulum"),
    ("model", "model kind(s), comma separated"),
    ("criterion", "acquisition criterion(s), comma separated"),
    ("seeds", "seed list for active learning, comma separated"),
    ("seed", "base seed for single runs"),
    ("n", "rows to generate"),
    ("policy", "data-collection policy: random, heuristic"),
    ("out", "output directory"),
    ("data", "input dataset CSV (with its .json sidecar)"),
    ("checkpoint", "model checkpoint to load"),
    ("initial_n", "initial training rows, or auto"),
    ("candidates", "candidate pool per epoch"),
    ("acquire", "points acquired per epoch"),
    ("epochs", "acquisition epochs"),
    ("eval_every", "evaluate every this many epochs"),
    ("eval_initial", "also evaluate before the first acquisition"),
    ("train_steps", "gradient steps of the initial fit"),
    ("retrain_steps", "gradient steps after each acquisition"),
    ("batch_size", "minibatch size"),
    ("lr", "Adam learning rate"),
    ("test_n", "held-out test rows"),
    ("kl_inputs", "test inputs used for KL and RMSE"),
    ("kl_samples", "samples per side for each KL estimate"),
    ("rmse_draws", "model draws averaged per RMSE pair"),
    ("hidden_layers", "hidden layers, or auto"),
    ("hidden_units", "hidden units per layer, or auto"),
    ("transforms", "flow transforms, or auto"),
    ("components", "ensemble components, or auto"),
    ("keep_prob", "dropout keep probability, or auto"),
    ("n_total", "mixture draws per point, or auto"),
    ("n_per_component", "output-space draws per component, or auto"),
    ("n_base", "base-space draws per point, or auto"),
    ("force_output_space", "estimate base-space models in output space"),
    ("dims", "dimension-study dimensions, comma separated"),
    ("dim_n", "dimension-study samples per estimate"),
    ("dim_seeds", "dimension-study seed count"),
    ("random_scaling", "dimension-study random standard deviations"),
    ("mi_points", "query points for mi-check"),
    ("mi_n", "draws per estimate for mi-check"),
    ("budget_nx", "query-point counts for budget-report, comma separated"),
    ("budget_nw", "draws per component for budget-report"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub models: Vec<ModelKind>,
    pub criteria: Vec<AcquisitionCriterion>,
    pub seeds: Vec<u64>,
    pub seed: u64,
    pub n: usize,
    pub policy: Policy,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub initial_n: Option<usize>,
    pub candidates: usize,
    pub acquire: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub eval_initial: bool,
    pub train_steps: usize,
    pub retrain_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub test_n: usize,
    pub kl_inputs: usize,
    pub kl_samples: usize,
    pub rmse_draws: usize,
    pub hidden_layers: Option<usize>,
    pub hidden_units: Option<usize>,
    pub transforms: Option<usize>,
    pub components: Option<usize>,
    pub keep_prob: Option<f64>,
    pub n_total: Option<usize>,
    pub n_per_component: Option<usize>,
    pub n_base: Option<usize>,
    pub force_output_space: bool,
    pub dims: Vec<usize>,
    pub dim_n: usize,
    pub dim_seeds: usize,
    pub random_scaling: bool,
    pub mi_points: usize,
    pub mi_n: usize,
    pub budget_nx: Vec<usize>,
    pub budget_nw: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let al = ALConfig::default();
        let dim = DimStudyConfig::default();
        Self {
            env: EnvKind::Hetero,
            models: vec![ModelKind::NflowsOut],
            criteria: vec![AcquisitionCriterion::Epistemic],
            seeds: vec![0],
            seed: 0,
            n: 1000,
            policy: Policy::Random,
            out: PathBuf::from("out"),
            data: None,
            checkpoint: None,
            initial_n: None,
            candidates: al.candidates_per_epoch,
            acquire: al.acquire_per_epoch,
            epochs: al.epochs,
            eval_every: al.eval_every,
            eval_initial: al.eval_initial,
            train_steps: al.initial_train.steps,
            retrain_steps: al.retrain.steps,
            batch_size: al.retrain.batch_size,
            lr: al.retrain.lr,
            test_n: al.test_n,
            kl_inputs: al.kl_inputs,
            kl_samples: al.kl_samples,
            rmse_draws: al.rmse_draws,
            hidden_layers: None,
            hidden_units: None,
            transforms: None,
            components: None,
            keep_prob: None,
            n_total: None,
            n_per_component: None,
            n_base: None,
            force_output_space: false,
            dims: dim.dims,
            dim_n: dim.n_samples,
            dim_seeds: dim.seeds,
            random_scaling: dim.random_scaling,
            mi_points: 10,
            mi_n: 20_000,
            budget_nx: vec![1, 10, 100, 1000],
            budget_nw: 1000,
        }
    }
}

fn bad(key: &str, value: &str, why: impl Display) -> Error {
    Error::Config(format!("{key} = `{value}`: {why}"))
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.trim().parse::<T>().map_err(|e| bad(key, value, e))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let v: usize = scalar(key, value)?;
    if v == 0 {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| bad(key, value, e)))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

fn is_auto(value: &str) -> bool {
    matches!(value.trim(), "auto" | "")
}

fn auto_positive(key: &str, value: &str) -> Result<Option<usize>> {
    if is_auto(value) {
        Ok(None)
    } else {
        positive(key, value).map(Some)
    }
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "auto".to_string(), |v| v.to_string())
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Canonical key spelling: flags use dashes, files may use either.
pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ExperimentConfig {
    /// Parses and range-checks one value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        match k {
            "env" => self.env = scalar(k, value)?,
            "model" => self.models = list(k, value)?,
            "criterion" => self.criteria = list(k, value)?,
            "seeds" => self.seeds = list(k, value)?,
            "seed" => self.seed = scalar(k, value)?,
            "n" => self.n = positive(k, value)?,
            "policy" => self.policy = scalar(k, value)?,
            "out" => self.out = path(value).ok_or_else(|| bad(k, value, "empty path"))?,
            "data" => self.data = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "initial_n" => self.initial_n = auto_positive(k, value)?,
            "candidates" => self.candidates = positive(k, value)?,
            "acquire" => self.acquire = positive(k, value)?,
            "epochs" => self.epochs = scalar(k, value)?,
            "eval_every" => self.eval_every = positive(k, value)?,
            "eval_initial" => self.eval_initial = scalar(k, value)?,
            "train_steps" => self.train_steps = scalar(k, value)?,
            "retrain_steps" => self.retrain_steps = scalar(k, value)?,
            "batch_size" => self.batch_size = positive(k, value)?,
            "lr" => {
                let lr: f64 = scalar(k, value)?;
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(bad(k, value, "must be positive and finite"));
                }
                self.lr = lr;
            }
            "test_n" => self.test_n = positive(k, value)?,
            "kl_inputs" => self.kl_inputs = positive(k, value)?,
            "kl_samples" => {
                let n = positive(k, value)?;
                if n <= crate::uncertainty::DEFAULT_K {
                    return Err(bad(k, value, "must exceed the neighbour count"));
                }
                self.kl_samples = n;
            }
            "rmse_draws" => self.rmse_draws = positive(k, value)?,
            "hidden_layers" => {
                self.hidden_layers = if is_auto(value) { None } else { Some(scalar(k, value)?) }
            }
            "hidden_units" => self.hidden_units = auto_positive(k, value)?,
            "transforms" => self.transforms = auto_positive(k, value)?,
            "components" => self.components = auto_positive(k, value)?,
            "keep_prob" => {
                self.keep_prob = if is_auto(value) {
                    None
                } else {
                    let p: f64 = scalar(k, value)?;
                    if !(p > 0.0 && p <= 1.0) {
                        return Err(bad(k, value, "must be in (0, 1]"));
                    }
                    Some(p)
                }
            }
            "n_total" => self.n_total = auto_positive(k, value)?,
            "n_per_component" => self.n_per_component = auto_positive(k, value)?,
            "n_base" => self.n_base = auto_positive(k, value)?,
            "force_output_space" => self.force_output_space = scalar(k, value)?,
            "dims" => {
                let dims: Vec<usize> = list(k, value)?;
                if dims.contains(&0) {
                    return Err(bad(k, value, "dimensions must be positive"));
                }
                self.dims = dims;
            }
            "dim_n" => self.dim_n = positive(k, value)?,
            "dim_seeds" => self.dim_seeds = positive(k, value)?,
            "random_scaling" => self.random_scaling = scalar(k, value)?,
            "mi_points" => self.mi_points = positive(k, value)?,
            "mi_n" => self.mi_n = positive(k, value)?,
            "budget_nx" => self.budget_nx = list(k, value)?,
            "budget_nw" => self.budget_nw = positive(k, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// The value of `key` in the spelling [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match normalize_key(key).as_str() {
            "env" => self.env.to_string(),
            "model" => join(&self.models),
            "criterion" => join(&self.criteria),
            "seeds" => join(&self.seeds),
            "seed" => self.seed.to_string(),
            "n" => self.n.to_string(),
            "policy" => self.policy.as_str().to_string(),
            "out" => self.out.display().to_string(),
            "data" => opt_path(&self.data),
            "checkpoint" => opt_path(&self.checkpoint),
            "initial_n" => opt(&self.initial_n),
            "candidates" => self.candidates.to_string(),
            "acquire" => self.acquire.to_string(),
            "epochs" => self.epochs.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "eval_initial" => self.eval_initial.to_string(),
            "train_steps" => self.train_steps.to_string(),
            "retrain_steps" => self.retrain_steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "test_n" => self.test_n.to_string(),
            "kl_inputs" => self.kl_inputs.to_string(),
            "kl_samples" => self.kl_samples.to_string(),
            "rmse_draws" => self.rmse_draws.to_string(),
            "hidden_layers" => opt(&self.hidden_layers),
            "hidden_units" => opt(&self.hidden_units),
            "transforms" => opt(&self.transforms),
            "components" => opt(&self.components),
            "keep_prob" => opt(&self.keep_prob),
            "n_total" => opt(&self.n_total),
            "n_per_component" => opt(&self.n_per_component),
            "n_base" => opt(&self.n_base),
            "force_output_space" => self.force_output_space.to_string(),
            "dims" => join(&self.dims),
            "dim_n" => self.dim_n.to_string(),
            "dim_seeds" => self.dim_seeds.to_string(),
            "random_scaling" => self.random_scaling.to_string(),
            "mi_points" => self.mi_points.to_string(),
            "mi_n" => self.mi_n.to_string(),
            "budget_nx" => join(&self.budget_nx),
            "budget_nw" => self.budget_nw.to_string(),
            _ => return None,
        })
    }

    /// All keys with their resolved values.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every key has a value")))
            .collect()
    }

    /// The resolved config as text that [`apply_file_text`](Self::apply_file_text) reads back.
    pub fn to_file_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            s.push_str(&format!("{k} = {}\n", self.get(k).expect("every key has a value")));
        }
        s
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are
    /// skipped; unknown or repeated keys are errors.
    pub fn apply_file_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            let key = normalize_key(k);
            if !seen.insert(key.clone()) {
                return Err(Error::Config(format!("{origin}:{}: `{key}` given twice", i + 1)));
            }
            self.set(&key, v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", i + 1, strip(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_file_text(&text, &path.display().to_string())
    }

    /// Defaults, then the file, then the flags.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn model_spec(&self, kind: ModelKind) -> Result<ModelSpec> {
        let mut spec = ModelSpec::for_env(kind, self.env);
        if let Some(v) = self.hidden_layers {
            spec.arch.hidden_layers = v;
        }
        if let Some(v) = self.hidden_units {
            spec.arch.hidden_units = v;
        }
        if let Some(v) = self.transforms {
            spec.arch.transforms = v;
        }
        if let Some(v) = self.components {
            spec.components = v;
        }
        if let Some(v) = self.keep_prob {
            spec.keep_prob = v;
        }
        if kind == ModelKind::Fixed {
            return Err(Error::Config("fixed mixtures cannot be trained from the command line".into()));
        }
        Ok(spec)
    }

    pub fn sampling(&self, spec: &ModelSpec) -> SamplingConfig {
        let mut s = SamplingConfig::for_kind(spec.kind, spec.components);
        if let Some(v) = self.n_total {
            s.n_total = v;
        }
        if let Some(v) = self.n_per_component {
            s.n_per_component = v;
        }
        if let Some(v) = self.n_base {
            s.n_base = v;
        }
        s.force_output_space = self.force_output_space;
        s
    }

    pub fn initial_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }

    pub fn al_config(&self, spec: &ModelSpec, seed: u64) -> Result<ALConfig> {
        let al = ALConfig {
            initial_n: self.initial_n,
            candidates_per_epoch: self.candidates,
            acquire_per_epoch: self.acquire,
            epochs: self.epochs,
            eval_every: self.eval_every,
            eval_initial: self.eval_initial,
            initial_train: self.initial_train(),
            retrain: TrainConfig {
                steps: self.retrain_steps,
                ..self.initial_train()
            },
            sampling: Some(self.sampling(spec)),
            test_n: self.test_n,
            kl_inputs: self.kl_inputs,
            kl_samples: self.kl_samples,
            rmse_draws: self.rmse_draws,
            seed,
        };
        al.validate()?;
        Ok(al)
    }

    pub fn dim_study(&self) -> DimStudyConfig {
        DimStudyConfig {
            dims: self.dims.clone(),
            n_samples: self.dim_n,
            seeds: self.dim_seeds,
            random_scaling: self.random_scaling,
            base_seed: self.seed,
        }
    }

    /// Cross-field checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.acquire > self.candidates {
            return Err(Error::Config(format!(
                "acquire ({}) exceeds candidates ({})",
                self.acquire, self.candidates
            )));
        }
        if self.kl_inputs > self.test_n {
            return Err(Error::Config(format!(
                "kl_inputs ({}) exceeds test_n ({})",
                self.kl_inputs, self.test_n
            )));
        }
        Ok(())
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let cfg = ExperimentConfig::default();
        let mut again = ExperimentConfig::default();
        again.apply_file_text(&cfg.to_file_text(), "resolved").unwrap();
        assert_eq!(cfg, again);
        for (k, _) in KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        std::fs::write(&f, "# comment\nenv = bimodal\nepochs = 3\nlr=0.01\n").unwrap();
        let flags = vec![("epochs".to_string(), "7".to_string())];
        let cfg = ExperimentConfig::resolve(Some(&f), &flags).unwrap();
        assert_eq!(cfg.env, EnvKind::Bimodal);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch_size, 64);
    }

    #[test]
    fn unknown_repeated_and_out_of_range_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.apply_file_text("colour = red", "f"), Err(Error::Config(m)) if m.contains("colour")));
        assert!(cfg.apply_file_text("n = 3\nn = 4", "f").is_err());
        assert!(cfg.apply_file_text("no equals sign", "f").is_err());
        for (k, v) in [
            ("lr", "0"),
            ("lr", "nan"),
            ("keep_prob", "1.5"),
            ("batch_size", "0"),
            ("kl_samples", "3"),
            ("env", "moon"),
            ("model", "tree"),
            ("criterion", "vibes"),
            ("seeds", ""),
            ("dims", "1,0"),
            ("eval_initial", "maybe"),
        ] {
            assert!(matches!(cfg.set(k, v), Err(Error::Config(_))), "{k}={v}");
        }
    }

    #[test]
    fn auto_values_and_lists() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("hidden-units", "32").unwrap();
        cfg.set("model", "nflows_base, pne").unwrap();
        cfg.set("seeds", "0,1,2").unwrap();
        assert_eq!(cfg.hidden_units, Some(32));
        assert_eq!(cfg.models, vec![ModelKind::NflowsBase, ModelKind::Pne]);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        cfg.set("hidden_units", "auto").unwrap();
        assert_eq!(cfg.hidden_units, None);
        let spec = cfg.model_spec(ModelKind::NflowsBase).unwrap();
        assert_eq!(spec, ModelSpec::for_env(ModelKind::NflowsBase, EnvKind::Hetero));
        assert_eq!(cfg.sampling(&spec), SamplingConfig::for_kind(ModelKind::NflowsBase, 5));
    }

    #[test]
    fn cross_field_checks() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("acquire", "20").unwrap();
        cfg.set("candidates", "10").unwrap();
        assert!(cfg.validate().is_err());
    }
}
