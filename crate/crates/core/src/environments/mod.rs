//! Data generators and simulators with ground-truth conditional samplers.

pub mod oned;
pub mod pendulum;
pub mod wet_chicken;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffcore::Mat;
use crate::error::{Error, Result};
pub use pendulum::{MixtureNoise, PendulumState};
pub use wet_chicken::WetChickenState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Hetero,
    Bimodal,
    WetChicken,
    Pendulum,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Hetero, EnvKind::Bimodal, EnvKind::WetChicken, EnvKind::Pendulum];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Hetero => "hetero",
            EnvKind::Bimodal => "bimodal",
            EnvKind::WetChicken => "wet_chicken",
            EnvKind::Pendulum => "pendulum",
        }
    }

    pub fn x_dim(self) -> usize {
        match self {
            EnvKind::Hetero | EnvKind::Bimodal => 1,
            EnvKind::WetChicken => 4,
            EnvKind::Pendulum => 4,
        }
    }

    pub fn y_dim(self) -> usize {
        match self {
            EnvKind::Hetero | EnvKind::Bimodal => 1,
            EnvKind::WetChicken => 2,
            EnvKind::Pendulum => 3,
        }
    }

    pub fn is_1d(self) -> bool {
        matches!(self, EnvKind::Hetero | EnvKind::Bimodal)
    }

    /// Initial training-set size for active learning.
    pub fn initial_n(self) -> usize {
        if self.is_1d() {
            100
        } else {
            200
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wetchicken" => Ok(EnvKind::WetChicken),
            _ => EnvKind::ALL
                .iter()
                .find(|e| e.as_str() == s)
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown environment `{s}`"))),
        }
    }
}

/// How inputs were collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// The environment's own input distribution (1D) or uniform random
    /// actions (dynamics).
    Random,
    /// Scripted controller (dynamics) or uniform inputs over the test range
    /// (1D).
    Heuristic,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Heuristic => "heuristic",
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Policy::Random),
            "heuristic" => Ok(Policy::Heuristic),
            _ => Err(Error::Config(format!("unknown policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Mat,
    pub y: Mat,
    pub env: EnvKind,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub env: EnvKind,
    pub policy: Policy,
    pub seed: Option<u64>,
    pub n: usize,
}

impl Dataset {
    pub fn new(x: Mat, y: Mat, env: EnvKind, policy: Policy) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!("{} inputs but {} targets", x.nrows(), y.nrows())));
        }
        if x.ncols() != env.x_dim() || y.ncols() != env.y_dim() {
            return Err(Error::Shape(format!(
                "{env} expects {}/{} columns, got {}/{}",
                env.x_dim(),
                env.y_dim(),
                x.ncols(),
                y.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Usage("dataset contains non-finite values".into()));
        }
        Ok(Self { x, y, env, policy })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn append(&mut self, x: &Mat, y: &Mat) -> Result<()> {
        if x.nrows() != y.nrows() || x.ncols() != self.x.ncols() || y.ncols() != self.y.ncols() {
            return Err(Error::Shape("appended rows do not match the dataset".into()));
        }
        self.x = concatenate(Axis(0), &[self.x.view(), x.view()]).expect("column counts checked");
        self.y = concatenate(Axis(0), &[self.y.view(), y.view()]).expect("column counts checked");
        Ok(())
    }

    pub fn header(&self) -> String {
        let xs = (0..self.x.ncols()).map(|i| format!("x{i}"));
        let ys = (0..self.y.ncols()).map(|i| format!("y{i}"));
        xs.chain(ys).collect::<Vec<_>>().join(",")
    }

    /// Writes `path` (CSV) and `path.json` (manifest).
    pub fn write_csv(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.header());
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = self.x.row(i).iter().chain(self.y.row(i).iter()).map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let manifest = DatasetManifest {
            env: self.env,
            policy: self.policy,
            seed,
            n: self.len(),
        };
        let mpath = sidecar_path(path);
        let mut f = std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        writeln!(f, "{text}").map_err(|e| Error::io(&mpath, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mpath = sidecar_path(path);
        let mtext = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&mtext).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (kx, ky) = (manifest.env.x_dim(), manifest.env.y_dim());
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), ln + 1)))?;
            if vals.len() != kx + ky {
                return Err(Error::Format(format!("{}:{}: expected {} values", path.display(), ln + 1, kx + ky)));
            }
            rows.push(vals);
        }
        let n = rows.len();
        let x = Array2::from_shape_fn((n, kx), |(i, j)| rows[i][j]);
        let y = Array2::from_shape_fn((n, ky), |(i, j)| rows[i][kx + j]);
        Self::new(x, y, manifest.env, manifest.policy)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Uniform test-input range of the 1D environments.
pub fn test_range(env: EnvKind) -> Option<(f64, f64)> {
    match env {
        EnvKind::Hetero => Some((-5.0, 5.0)),
        EnvKind::Bimodal => Some((0.0, 2.0)),
        _ => None,
    }
}

const EPISODE_LEN: usize = 100;

fn wc_input(s: WetChickenState, a: [f64; 2]) -> [f64; 4] {
    [s.x, s.y, a[0], a[1]]
}

fn pendulum_input(s: PendulumState, a: f64) -> [f64; 4] {
    let o = s.observe();
    [o[0], o[1], o[2], a]
}

/// Samples `n` transitions (1D: input/label pairs) under a policy.
pub fn collect(env: EnvKind, policy: Policy, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Usage("collect needs n >= 1".into()));
    }
    let (x, y) = match env {
        EnvKind::Hetero | EnvKind::Bimodal => {
            let xs = match policy {
                Policy::Random => input_draws(env, n, rng),
                Policy::Heuristic => {
                    let (lo, hi) = test_range(env).expect("1D range");
                    Array2::from_shape_fn((n, 1), |_| rng.gen_range(lo..hi))
                }
            };
            let ys = label(env, &xs, rng)?;
            (xs, ys)
        }
        EnvKind::WetChicken => {
            let mut xs = Array2::zeros((n, 4));
            let mut ys = Array2::zeros((n, 2));
            let mut s = WetChickenState::origin();
            for i in 0..n {
                if i % EPISODE_LEN == 0 {
                    s = match policy {
                        Policy::Random => WetChickenState::new(rng.gen_range(0.0..=5.0), rng.gen_range(0.0..=5.0)),
                        Policy::Heuristic => WetChickenState::origin(),
                    };
                }
                let a = match policy {
                    Policy::Random => wet_chicken::random_action(rng),
                    Policy::Heuristic => wet_chicken::heuristic_action(s, rng),
                };
                let next = wet_chicken::wet_chicken_step(s, a, rng);
                xs.row_mut(i).assign(&ndarray::arr1(&wc_input(s, a)));
                ys.row_mut(i).assign(&ndarray::arr1(&[next.x, next.y]));
                s = next;
            }
            (xs, ys)
        }
        EnvKind::Pendulum => {
            let noise = MixtureNoise::default();
            let mut xs = Array2::zeros((n, 4));
            let mut ys = Array2::zeros((n, 3));
            let mut s = pendulum::random_state(rng);
            for i in 0..n {
                if i % EPISODE_LEN == 0 {
                    s = pendulum::random_state(rng);
                }
                let a = match policy {
                    Policy::Random => pendulum::random_action(rng),
                    Policy::Heuristic => pendulum::heuristic_action(s),
                };
                let next = pendulum::pendulum_step(s, a, Some(&noise), rng);
                xs.row_mut(i).assign(&ndarray::arr1(&pendulum_input(s, a)));
                ys.row_mut(i).assign(&ndarray::arr1(&next.observe()));
                s = next;
            }
            (xs, ys)
        }
    };
    Dataset::new(x, y, env, policy)
}

fn input_draws(env: EnvKind, n: usize, rng: &mut dyn RngCore) -> Mat {
    match env {
        EnvKind::Hetero => Array2::from_shape_fn((n, 1), |_| oned::hetero_x(rng)),
        EnvKind::Bimodal => Array2::from_shape_fn((n, 1), |_| oned::bimodal_x(rng)),
        _ => unreachable!("only 1D environments draw bare inputs"),
    }
}

/// `n` draws from the true conditional p(y | x).
pub fn truth_samples(env: EnvKind, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
    if x.len() != env.x_dim() {
        return Err(Error::Shape(format!("{env} input has {} entries, got {}", env.x_dim(), x.len())));
    }
    Ok(match env {
        EnvKind::Hetero => oned::hetero_truth(x[0], n, rng),
        EnvKind::Bimodal => oned::bimodal_truth(x[0], n, rng),
        EnvKind::WetChicken => {
            let s = WetChickenState::new(x[0], x[1]);
            let mut out = Array2::zeros((n, 2));
            for mut r in out.rows_mut() {
                let next = wet_chicken::wet_chicken_step(s, [x[2], x[3]], rng);
                r[0] = next.x;
                r[1] = next.y;
            }
            out
        }
        EnvKind::Pendulum => {
            let noise = MixtureNoise::default();
            let s = PendulumState::from_observation(&x[..3]);
            let mut out = Array2::zeros((n, 3));
            for mut r in out.rows_mut() {
                let o = pendulum::pendulum_step(s, x[3], Some(&noise), rng).observe();
                r.assign(&ndarray::arr1(&o));
            }
            out
        }
    })
}

/// One label per input row.
pub fn label(env: EnvKind, xs: &Mat, rng: &mut dyn RngCore) -> Result<Mat> {
    let mut out = Array2::zeros((xs.nrows(), env.y_dim()));
    for (i, x) in xs.rows().into_iter().enumerate() {
        let y = truth_samples(env, &x.to_vec(), 1, rng)?;
        out.row_mut(i).assign(&y.row(0));
    }
    Ok(out)
}

/// Candidate inputs: the training input marginal (1D) or replayed
/// random-policy transitions (dynamics).
pub fn propose_candidates(env: EnvKind, n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
    if n == 0 {
        return Err(Error::Usage("propose_candidates needs n >= 1".into()));
    }
    if env.is_1d() {
        Ok(input_draws(env, n, rng))
    } else {
        Ok(collect(env, Policy::Random, n, rng)?.x)
    }
}
