//! The standard-prior comparator: the same sampler with every factor score
//! given an independent `N(0, 1)` prior.
//!
//! This is the mixture engine restricted to a single stick whose atom is
//! held at `eta = 0`, `tau = 1`, with the mixture blocks switched off.

use crate::config::{ModelConfig, ScorePrior};
use crate::data::Dataset;
use crate::error::Result;
use crate::gibbs::{run_chain_with_plan, ChainOutput, SweepPlan};

/// Engine configuration and plan realising the standard prior.
pub(crate) fn standard_engine(cfg: &ModelConfig) -> (ModelConfig, SweepPlan) {
    let mut engine = cfg.clone();
    engine.prior = ScorePrior::Standard;
    engine.l_max = 1;
    engine.fixed_tau = true;
    (engine, SweepPlan::without_mixture())
}

pub fn run_chain_standard(data: &Dataset, cfg: &ModelConfig, seed: u64) -> Result<ChainOutput> {
    let (engine, plan) = standard_engine(cfg);
    run_chain_with_plan(data, &engine, plan, seed)
}
