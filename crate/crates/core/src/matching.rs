//! Propensity score estimation and greedy 1:1 nearest-neighbour matching
//! without replacement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CfmError, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-4;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub probabilities: Vec<f64>,
    /// Intercept first, then one coefficient per standardized covariate.
    pub coefficients: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the unpenalized fit failed and the ridge fit was used.
    pub ridge: bool,
}

fn design(data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_fn(data.n(), data.p() + 1, |i, c| if c == 0 { 1.0 } else { data.x[(i, c - 1)] })
}

/// Newton-Raphson (IRLS) for logistic regression with an optional ridge
/// penalty on every coefficient but the intercept.
fn irls(x: &DMatrix<f64>, t: &DVector<f64>, penalty: f64) -> (DVector<f64>, usize, bool) {
    let k = x.ncols();
    let mut beta = DVector::zeros(k);
    for it in 1..=MAX_ITER {
        let eta = x * &beta;
        let p = eta.map(|v| (1.0 / (1.0 + (-v).exp())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
        let mut grad = x.tr_mul(&(t - &p));
        for c in 1..k {
            grad[c] -= penalty * beta[c];
        }
        if grad.norm() < GRAD_TOL {
            return (beta, it, true);
        }
        let w = p.map(|v| v * (1.0 - v));
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..x.nrows() {
            let row = x.row(i);
            hess += w[i] * row.transpose() * row;
        }
        for c in 1..k {
            hess[(c, c)] += penalty;
        }
        let Some(step) = hess.cholesky().map(|ch| ch.solve(&grad)) else {
            return (beta, it, false);
        };
        beta += step;
        if !beta.iter().all(|v| v.is_finite()) {
            return (beta, it, false);
        }
    }
    (beta, MAX_ITER, false)
}

/// Logistic regression of treatment on the standardized covariates.
///
/// A non-converged or separated fit (a linear predictor beyond +-30) is
/// redone with a small ridge penalty.
pub fn fit_propensity(data: &Dataset) -> Result<PropensityFit> {
    let n1 = data.t.iter().filter(|&&t| t == 1).count();
    if n1 == 0 || n1 == data.n() {
        return Err(CfmError::Validation("propensity model needs both arms".into()));
    }
    let x = design(data);
    let t = DVector::from_iterator(data.n(), data.t.iter().map(|&v| v as f64));
    let (mut beta, mut iterations, mut converged) = irls(&x, &t, 0.0);
    let separated = (&x * &beta).iter().any(|v| !v.is_finite() || v.abs() > 30.0);
    let ridge = !converged || separated;
    if ridge {
        (beta, iterations, converged) = irls(&x, &t, RIDGE);
    }
    let probabilities = (&x * &beta)
        .iter()
        .map(|v| (1.0 / (1.0 + (-v).exp())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        .collect();
    Ok(PropensityFit { probabilities, coefficients: beta, iterations, converged, ridge })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    /// Treated units left without a partner.
    pub dropped: Vec<usize>,
}

impl MatchResult {
    /// Row indices of every matched unit, ascending.
    pub fn rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.pairs.iter().flat_map(|p| [p.treated, p.control]).collect();
        rows.sort_unstable();
        rows
    }
}

/// Greedy matching: treated units in descending propensity each take the
/// closest unused control (ties to the lower index). Pairs farther apart
/// than `caliper` are not formed.
pub fn match_1to1(propensity: &[f64], t: &[u8], caliper: Option<f64>) -> Result<MatchResult> {
    if propensity.len() != t.len() {
        return Err(CfmError::Validation("propensity and treatment lengths differ".into()));
    }
    let mut treated: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1).collect();
    let controls: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 0).collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(CfmError::Validation("matching needs both arms".into()));
    }
    treated.sort_by(|&a, &b| propensity[b].total_cmp(&propensity[a]).then(a.cmp(&b)));
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for &i in &treated {
        let best = controls
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, &c)| (k, c, (propensity[i] - propensity[c]).abs()))
            .min_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)));
        match best {
            Some((k, c, d)) if caliper.is_none_or(|cal| d <= cal) => {
                used[k] = true;
                pairs.push(MatchedPair { treated: i, control: c, distance: d });
            }
            _ => dropped.push(i),
        }
    }
    Ok(MatchResult { pairs, dropped })
}

/// Standardized mean difference of each covariate between the arms of the
/// given rows, on the raw covariate scale.
pub fn standardized_differences(data: &Dataset, rows: &[usize]) -> Vec<f64> {
    let moments = |vals: &[f64]| {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (mean, var)
    };
    (0..data.p())
        .map(|k| {
            let arm = |a: u8| -> Vec<f64> { rows.iter().filter(|&&i| data.t[i] == a).map(|&i| data.x_raw[(i, k)]).collect() };
            let (m1, v1) = moments(&arm(1));
            let (m0, v0) = moments(&arm(0));
            let pooled = (0.5 * (v1 + v0)).sqrt();
            if pooled > 0.0 {
                (m1 - m0) / pooled
            } else {
                0.0
            }
        })
        .collect()
}

/// Covariate balance before and after matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub covariates: Vec<String>,
    pub smd_before: Vec<f64>,
    pub smd_after: Vec<f64>,
}

pub fn balance(data: &Dataset, result: &MatchResult) -> Balance {
    let all: Vec<usize> = (0..data.n()).collect();
    Balance {
        covariates: data.covariate_names.clone(),
        smd_before: standardized_differences(data, &all),
        smd_after: standardized_differences(data, &result.rows()),
    }
}
