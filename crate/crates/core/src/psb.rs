//! Covariate-dependent probit stick-breaking mixture prior on factor scores.
//!
//! For arm `t` and factor `h`, unit `i` falls in cluster `r` with probability
//! `pi_r(x_i) = Phi(a_r(x_i)) * prod_{g<r} (1 - Phi(a_g(x_i)))`, where
//! `a_r(x) = alpha_0r + alpha_r' x` and the last stick takes the residual
//! mass. Given the cluster, the score is `N(eta_r, 1 / tau_r)`.
//!
//! Conjugacy for the stick coefficients comes from the usual probit
//! augmentation: a unit in cluster `s` carries latent `Z_r ~ N(a_r(x), 1)`
//! for every stick `r <= s` it reached, negative for `r < s` and positive at
//! `r = s` (no positive draw when `s` is the residual stick).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist;
use crate::error::{CfmError, Result};
use crate::state::ArmState;

/// Linear predictor of stick `stick` at covariates `x`.
pub fn linear_predictor(coeffs: &DMatrix<f64>, stick: usize, x: &[f64]) -> f64 {
    let row = coeffs.row(stick);
    let mut a = row[0];
    for (k, xk) in x.iter().enumerate() {
        a += row[k + 1] * xk;
    }
    a
}

/// Stick-breaking weights from the stick linear predictors; one more weight
/// than predictors, the last being the residual mass.
pub fn stick_weights_from_predictors(predictors: &[f64]) -> Vec<f64> {
    let mut weights = Vec::with_capacity(predictors.len() + 1);
    let mut remaining = 1.0;
    for &a in predictors {
        let v = dist::norm_cdf(a);
        weights.push(remaining * v);
        remaining *= dist::norm_cdf(-a);
    }
    weights.push(remaining);
    weights
}

/// Mixture weights at covariates `x` for a factor with `coeffs.nrows() + 1` sticks.
pub fn stick_weights(x: &[f64], coeffs: &DMatrix<f64>) -> Vec<f64> {
    let preds: Vec<f64> = (0..coeffs.nrows()).map(|r| linear_predictor(coeffs, r, x)).collect();
    stick_weights_from_predictors(&preds)
}

/// Log mixture weights, accurate when sticks saturate.
pub fn ln_stick_weights(x: &[f64], coeffs: &DMatrix<f64>) -> Vec<f64> {
    let sticks = coeffs.nrows();
    let mut out = Vec::with_capacity(sticks + 1);
    let mut ln_remaining = 0.0;
    for r in 0..sticks {
        let a = linear_predictor(coeffs, r, x);
        out.push(ln_remaining + dist::ln_norm_cdf(a));
        ln_remaining += dist::ln_norm_cdf(-a);
    }
    out.push(ln_remaining);
    out
}

/// Draw a cluster label with probability proportional to
/// `pi_r * N(score; eta_r, 1 / tau_r)`.
pub fn sample_label<R: Rng + ?Sized>(
    rng: &mut R,
    ln_weights: &[f64],
    score: f64,
    eta: &[f64],
    tau: &[f64],
) -> Option<usize> {
    let logs: Vec<f64> = ln_weights
        .iter()
        .enumerate()
        .map(|(r, lw)| lw + dist::ln_normal_density(score, eta[r], tau[r]))
        .collect();
    dist::categorical_from_logs(rng, &logs)
}

/// Resample the cluster label of every `(unit, factor)` pair for `units`.
pub fn allocate_clusters<R: Rng + ?Sized>(
    rng: &mut R,
    arm: &mut ArmState,
    units: &[usize],
    x_rows: &[Vec<f64>],
) -> Result<()> {
    let j = arm.n_factors();
    let etas: Vec<Vec<f64>> = (0..j).map(|h| arm.eta.column(h).iter().copied().collect()).collect();
    let taus: Vec<Vec<f64>> = (0..j).map(|h| arm.tau.column(h).iter().copied().collect()).collect();
    for &i in units {
        for h in 0..j {
            let lw = ln_stick_weights(&x_rows[i], &arm.alpha[h]);
            let label = sample_label(rng, &lw, arm.scores[(i, h)], &etas[h], &taus[h])
                .ok_or(CfmError::DegenerateAllocation { unit: i, factor: h })?;
            arm.labels[(i, h)] = label;
        }
    }
    Ok(())
}

/// Hyperparameters of the atom update.
#[derive(Debug, Clone, Copy)]
pub struct AtomPrior {
    pub mu_eta: f64,
    pub sigma2_eta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub fixed_tau: bool,
}

/// Conjugate draw of one atom given the scores allocated to it.
///
/// `eta ~ N((tau * sum + mu/s2) / V, 1 / V)` with `V = n tau + 1/s2`, then,
/// unless `fixed_tau`, `tau ~ Gamma(g1 + n/2, g2 + sum (l - eta)^2 / 2)`.
pub fn draw_atom<R: Rng + ?Sized>(rng: &mut R, members: &[f64], tau: f64, prior: &AtomPrior) -> (f64, f64) {
    let n = members.len() as f64;
    let sum: f64 = members.iter().sum();
    let precision = n * tau + 1.0 / prior.sigma2_eta;
    let mean = (tau * sum + prior.mu_eta / prior.sigma2_eta) / precision;
    let eta = dist::normal(rng, mean, precision.recip().sqrt());
    if prior.fixed_tau {
        return (eta, tau);
    }
    let ss: f64 = members.iter().map(|l| (l - eta) * (l - eta)).sum();
    let tau = dist::gamma(rng, prior.gamma1 + 0.5 * n, prior.gamma2 + 0.5 * ss);
    (eta, tau)
}

/// Update every atom of every factor from the scores of `units`.
pub fn update_atoms<R: Rng + ?Sized>(rng: &mut R, arm: &mut ArmState, units: &[usize], prior: &AtomPrior) {
    let l = arm.n_sticks();
    for h in 0..arm.n_factors() {
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); l];
        for &i in units {
            members[arm.labels[(i, h)]].push(arm.scores[(i, h)]);
        }
        for (r, m) in members.iter().enumerate() {
            let (eta, tau) = draw_atom(rng, m, arm.tau[(r, h)], prior);
            arm.eta[(r, h)] = eta;
            arm.tau[(r, h)] = tau;
        }
    }
}

/// Latent probit variables for one arm.
///
/// `z[h][k]` holds the draws for unit `units[k]` on factor `h`, one per
/// stick the unit reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub units: Vec<usize>,
    pub z: Vec<Vec<Vec<f64>>>,
}

impl Augmentation {
    /// Cluster label encoded by the signs of the latent draws.
    pub fn implied_label(&self, k: usize, h: usize) -> usize {
        let zs = &self.z[h][k];
        zs.iter().position(|&v| v > 0.0).unwrap_or(zs.len())
    }
}

/// Draw the truncated-normal latent variables given the current labels.
pub fn augment_probit<R: Rng + ?Sized>(
    rng: &mut R,
    arm: &ArmState,
    units: &[usize],
    x_rows: &[Vec<f64>],
) -> Augmentation {
    let j = arm.n_factors();
    let sticks = arm.n_sticks() - 1;
    let mut z = vec![Vec::with_capacity(units.len()); j];
    for (h, zh) in z.iter_mut().enumerate() {
        let coeffs = &arm.alpha[h];
        for &i in units {
            let label = arm.labels[(i, h)];
            let reached = (label + 1).min(sticks);
            let mut zs = Vec::with_capacity(reached);
            for r in 0..reached {
                let a = linear_predictor(coeffs, r, &x_rows[i]);
                zs.push(if r == label {
                    dist::truncated_normal_positive(rng, a)
                } else {
                    dist::truncated_normal_negative(rng, a)
                });
            }
            zh.push(zs);
        }
    }
    Augmentation { units: units.to_vec(), z }
}

/// Conjugate draw of a coefficient vector from design rows and latent draws:
/// `N(W^{-1}(mu 1 / s2 + X'Z), W^{-1})` with `W = I / s2 + X'X`. Rows are
/// prefixed with the intercept internally.
pub fn draw_stick_coefficients<R: Rng + ?Sized>(
    rng: &mut R,
    rows: &[(&[f64], f64)],
    dim: usize,
    mu_alpha: f64,
    sigma2_alpha: f64,
) -> Result<DVector<f64>> {
    let mut w = DMatrix::from_diagonal_element(dim, dim, 1.0 / sigma2_alpha);
    let mut b = DVector::from_element(dim, mu_alpha / sigma2_alpha);
    let mut design = vec![1.0; dim];
    for (x, z) in rows {
        design[1..].copy_from_slice(x);
        for a in 0..dim {
            b[a] += design[a] * z;
            for c in 0..=a {
                w[(a, c)] += design[a] * design[c];
            }
        }
    }
    for a in 0..dim {
        for c in 0..a {
            w[(c, a)] = w[(a, c)];
        }
    }
    dist::mvn_from_precision(rng, w, &b, "stick coefficients")
}

/// Resample every stick's coefficients from the augmentation.
///
/// Stick `r` is informed by the units whose label is at least `r`.
pub fn update_stick_coefficients<R: Rng + ?Sized>(
    rng: &mut R,
    arm: &mut ArmState,
    aug: &Augmentation,
    x_rows: &[Vec<f64>],
    mu_alpha: f64,
    sigma2_alpha: f64,
) -> Result<()> {
    let sticks = arm.n_sticks() - 1;
    for h in 0..arm.n_factors() {
        let dim = arm.alpha[h].ncols();
        for r in 0..sticks {
            let rows: Vec<(&[f64], f64)> = aug
                .units
                .iter()
                .zip(&aug.z[h])
                .filter(|(_, zs)| zs.len() > r)
                .map(|(&i, zs)| (x_rows[i].as_slice(), zs[r]))
                .collect();
            let coef = draw_stick_coefficients(rng, &rows, dim, mu_alpha, sigma2_alpha)?;
            arm.alpha[h].row_mut(r).copy_from(&coef.transpose());
        }
    }
    Ok(())
}

/// Predictive draw of one factor score at covariates `x`: a cluster from the
/// stick-breaking weights, then a score from that cluster's Gaussian.
pub fn sample_scores_prior<R: Rng + ?Sized>(
    rng: &mut R,
    x: &[f64],
    coeffs: &DMatrix<f64>,
    eta: &[f64],
    tau: &[f64],
) -> (usize, f64) {
    let lw = ln_stick_weights(x, coeffs);
    let label = dist::categorical_from_logs(rng, &lw).expect("stick weights always carry mass");
    let score = dist::normal(rng, eta[label], tau[label].recip().sqrt());
    (label, score)
}
