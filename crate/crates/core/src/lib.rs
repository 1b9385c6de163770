//! Bayesian causal factor regression with covariate-dependent mixture
//! priors on the factor scores.

pub mod baseline;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod estimands;
pub mod evaluation;
pub mod geweke;
pub mod gibbs;
pub mod matching;
pub mod mgp;
pub mod output;
pub mod psb;
pub mod runner;
pub mod simulation;
pub mod state;
pub mod study;

pub use config::{ModelConfig, ScorePrior};
pub use data::{Dataset, Schema};
pub use error::{CfmError, Result};
