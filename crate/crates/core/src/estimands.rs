use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CfmError, Result};

/// Posterior summary of one outcome's treatment effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
    pub sd: f64,
    /// `+1` if the interval lies above zero, `-1` below, `0` otherwise.
    pub sig: i8,
}

/// Per-outcome effect summaries with equal-tailed credible intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub outcomes: Vec<OutcomeSummary>,
    pub level: f64,
    pub m: usize,
}

/// Sample quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sign_of_interval(lo: f64, hi: f64) -> i8 {
    if lo > 0.0 {
        1
    } else if hi < 0.0 {
        -1
    } else {
        0
    }
}

/// Summarise an `m x q` matrix of effect draws. Outcomes are named from
/// `names` when given, else `sate_1..sate_q`.
pub fn summarize_sate(draws: &DMatrix<f64>, level: f64, names: Option<&[String]>) -> Result<EffectSummary> {
    let (m, q) = draws.shape();
    if m < 2 {
        return Err(CfmError::Validation(format!("need at least 2 draws to summarise, got {m}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CfmError::Validation(format!("credible level {level} outside (0, 1)")));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(CfmError::Validation("non-finite effect draw".into()));
    }
    let tail = 0.5 * (1.0 - level);
    let outcomes = (0..q)
        .map(|k| {
            let mut col: Vec<f64> = draws.column(k).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / m as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
            let lo = quantile_sorted(&col, tail);
            let hi = quantile_sorted(&col, 1.0 - tail);
            OutcomeSummary {
                name: names.map_or_else(|| format!("sate_{}", k + 1), |n| n[k].clone()),
                mean,
                median: quantile_sorted(&col, 0.5),
                lo,
                hi,
                sd: var.sqrt(),
                sig: sign_of_interval(lo, hi),
            }
        })
        .collect();
    Ok(EffectSummary { outcomes, level, m })
}

pub fn significance_flags(summary: &EffectSummary) -> Vec<i8> {
    summary.outcomes.iter().map(|o| sign_of_interval(o.lo, o.hi)).collect()
}
