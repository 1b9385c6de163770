use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CfmError, Result};

/// Which prior the factor scores carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScorePrior {
    /// Covariate-dependent probit stick-breaking mixture.
    #[default]
    Ddp,
    /// Independent `N(0, 1)` scores.
    Standard,
}

impl ScorePrior {
    pub fn name(self) -> &'static str {
        match self {
            ScorePrior::Ddp => "ddp",
            ScorePrior::Standard => "standard",
        }
    }
}

impl std::str::FromStr for ScorePrior {
    type Err = CfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddp" => Ok(ScorePrior::Ddp),
            "standard" => Ok(ScorePrior::Standard),
            other => Err(CfmError::Config(format!("unknown prior `{other}`"))),
        }
    }
}

/// Sampler configuration. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Factor truncation, shared by both arms.
    pub j_max: usize,
    /// Number of sticks in the truncated probit stick-breaking prior.
    pub l_max: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub rng_seed: u64,
    pub prior: ScorePrior,

    /// Intercept prior mean and variance (diagonal, shared across outcomes).
    pub mu_m: f64,
    pub sigma2_m: f64,
    /// Regression coefficient prior mean and variance.
    pub mu_beta: f64,
    pub sigma2_beta: f64,

    /// Multiplicative gamma process hyperparameters.
    pub nu: f64,
    pub a1: f64,
    pub a2: f64,

    /// Inverse-gamma prior on the idiosyncratic variances.
    pub a_psi: f64,
    pub b_psi: f64,

    /// Normal prior on mixture atom locations.
    pub mu_eta: f64,
    pub sigma2_eta: f64,
    /// Gamma prior on atom precisions, used only when `fixed_tau` is false.
    pub gamma1: f64,
    pub gamma2: f64,
    pub fixed_tau: bool,

    /// Normal prior on stick-breaking coefficients.
    pub mu_alpha: f64,
    pub sigma2_alpha: f64,

    pub credible_level: f64,
    /// Include idiosyncratic noise when imputing counterfactual outcomes.
    pub impute_noise: bool,
    /// Keep a parameter snapshot every this many kept draws; 0 disables.
    pub snapshot_every: usize,
    /// Keep imputed counterfactual outcomes for every kept draw.
    pub store_counterfactuals: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            j_max: 3,
            l_max: 10,
            n_iter: 3000,
            burn_in: 1500,
            thin: 1,
            rng_seed: 0,
            prior: ScorePrior::Ddp,
            mu_m: 0.0,
            sigma2_m: 100.0,
            mu_beta: 0.0,
            sigma2_beta: 100.0,
            nu: 3.0,
            a1: 2.1,
            a2: 3.1,
            a_psi: 1.0,
            b_psi: 1.0,
            mu_eta: 0.0,
            sigma2_eta: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            fixed_tau: true,
            mu_alpha: 0.0,
            sigma2_alpha: 1.0,
            credible_level: 0.90,
            impute_noise: true,
            snapshot_every: 1,
            store_counterfactuals: false,
        }
    }
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)
            .map_err(|e| CfmError::Config(format!("config document: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CfmError::Config(format!("config file not found: {}", path.display()))
            } else {
                CfmError::io(path, e)
            }
        })?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| CfmError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of draws a chain keeps.
    pub fn kept_draws(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    /// Full check applied to user-facing configurations.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.prior == ScorePrior::Ddp && self.l_max < 2 {
            return Err(CfmError::Config("l_max must be at least 2".into()));
        }
        Ok(())
    }

    /// Checks shared by every engine configuration, including the
    /// single-stick reduction used by the standard-prior baseline.
    pub(crate) fn validate_structure(&self) -> Result<()> {
        let bad = |msg: &str| Err(CfmError::Config(msg.to_string()));
        if self.j_max < 1 {
            return bad("j_max must be at least 1");
        }
        if self.l_max < 1 {
            return bad("l_max must be at least 1");
        }
        if self.thin < 1 {
            return bad("thin must be at least 1");
        }
        if self.n_iter < 1 {
            return bad("n_iter must be positive");
        }
        if self.burn_in >= self.n_iter {
            return bad("burn_in must be smaller than n_iter");
        }
        let positive = [
            ("sigma2_m", self.sigma2_m),
            ("sigma2_beta", self.sigma2_beta),
            ("nu", self.nu),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a_psi", self.a_psi),
            ("b_psi", self.b_psi),
            ("sigma2_eta", self.sigma2_eta),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("sigma2_alpha", self.sigma2_alpha),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CfmError::Config(format!("{name} must be positive and finite")));
            }
        }
        for (name, v) in [("mu_m", self.mu_m), ("mu_beta", self.mu_beta), ("mu_eta", self.mu_eta), ("mu_alpha", self.mu_alpha)] {
            if !v.is_finite() {
                return Err(CfmError::Config(format!("{name} must be finite")));
            }
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return bad("credible_level must lie in (0, 1)");
        }
        Ok(())
    }
}
