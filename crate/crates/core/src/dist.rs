//! Normal-family primitives shared by the Gibbs blocks: the standard normal
//! CDF and quantile, a log-CDF that stays finite deep in the lower tail,
//! one-sided truncated normal draws and Gaussian draws parameterised by a
//! precision matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{CfmError, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Truncation point beyond which the exponential-rejection tail sampler is used.
pub const TAIL_SWITCH: f64 = 5.0;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Natural log of the standard normal CDF.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-norm_cdf(-x)).ln_1p()
    } else if x > -37.0 {
        norm_cdf(x).ln()
    } else {
        // Asymptotic Mills-ratio expansion; erfc underflows past here.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Standard normal quantile function.
///
/// The inverse-erfc starting value is polished with one Halley step
/// against the CDF, computed in whichever tail keeps `p` exact.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

fn lower_quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    let e = norm_cdf(x) - p;
    let u = e / norm_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Log density of `N(mean, 1/precision)` at `x`.
pub fn ln_normal_density(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * precision.ln() - LN_SQRT_2PI - 0.5 * precision * d * d
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    mean + sd * standard_normal(rng)
}

/// Gamma draw with shape/rate parameterisation.
///
/// Invalid parameters (for example an infinite rate after numerical
/// overflow upstream) yield NaN so the caller's finiteness guard reports it.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    match Gamma::new(shape, 1.0 / rate) {
        Ok(g) if rate.is_finite() && rate > 0.0 => g.sample(rng),
        _ => f64::NAN,
    }
}

/// Draw `Y ~ N(0, 1)` conditioned on `Y > lower`.
///
/// Inverse-CDF on the upper tail mass for `lower <= TAIL_SWITCH`, and
/// Robert's exponential rejection sampler beyond it.
pub fn std_normal_above<R: Rng + ?Sized>(rng: &mut R, lower: f64) -> f64 {
    if lower > TAIL_SWITCH {
        let rate = 0.5 * (lower + (lower * lower + 4.0).sqrt());
        loop {
            let e: f64 = rng.sample(Exp1);
            let z = lower + e / rate;
            let u: f64 = rng.sample(Open01);
            let d = z - rate;
            if u.ln() <= -0.5 * d * d {
                return z;
            }
        }
    }
    let mass = norm_cdf(-lower);
    let u: f64 = rng.sample(Open01);
    let y = -norm_quantile(u * mass);
    // Rounding in the quantile can land exactly on the bound.
    if y > lower {
        y
    } else {
        next_up(lower)
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Draw from `N(mean, 1)` restricted to the positive half line.
pub fn truncated_normal_positive<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let x = mean + std_normal_above(rng, -mean);
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}

/// Draw from `N(mean, 1)` restricted to the negative half line.
pub fn truncated_normal_negative<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    -truncated_normal_positive(rng, -mean)
}

/// Draw from `N(P^{-1} b, P^{-1})` given the precision `P` and the
/// canonical vector `b`.
pub fn mvn_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    precision: DMatrix<f64>,
    canonical: &DVector<f64>,
    context: &'static str,
) -> Result<DVector<f64>> {
    let dim = canonical.len();
    let chol = precision
        .cholesky()
        .ok_or(CfmError::NotPositiveDefinite(context))?;
    let mean = chol.solve(canonical);
    let z = DVector::from_fn(dim, |_, _| standard_normal(rng));
    let noise = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or(CfmError::NotPositiveDefinite(context))?;
    Ok(mean + noise)
}

/// Draw a categorical index from unnormalized log-probabilities.
///
/// Returns `None` when no entry carries finite positive mass. A single
/// category consumes no randomness.
pub fn categorical_from_logs<R: Rng + ?Sized>(rng: &mut R, logs: &[f64]) -> Option<usize> {
    if logs.len() == 1 {
        return logs[0].is_finite().then_some(0);
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    let mut cum = Vec::with_capacity(logs.len());
    for &l in logs {
        total += (l - max).exp();
        cum.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let u: f64 = rng.random::<f64>() * total;
    Some(cum.iter().position(|&c| u < c).unwrap_or(logs.len() - 1))
}
