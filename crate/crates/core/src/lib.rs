//! Conditional normalizing-flow ensembles with an entropy-based split of
//! predictive uncertainty into aleatoric and epistemic parts, Gaussian
//! baselines, stochastic regression environments, and an active-learning
//! benchmark.

pub mod activelearn;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod evalmetrics;
pub mod numeric;

pub use error::{Error, Result};
pub mod ensembles;
pub mod environments;
pub mod flows;
pub mod gaussian;
pub mod training;
pub mod uncertainty;
