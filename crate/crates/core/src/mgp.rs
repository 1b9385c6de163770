//! Loadings, idiosyncratic variances and the multiplicative gamma process
//! shrinkage prior on the loadings.
//!
//! `lambda_jh ~ N(0, 1 / (theta_jh iota_h))`, `theta_jh ~ Gamma(nu/2, nu/2)`,
//! `iota_h = prod_{m <= h} delta_m` with `delta_0 ~ Gamma(a1, 1)` and
//! `delta_m ~ Gamma(a2, 1)` afterwards. With `a2 > 1` the column precisions
//! grow in expectation, so later factors are shrunk harder.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist;
use crate::error::Result;
use crate::state::cumulative_products;

/// Draw every loading row given scores and the regression-adjusted outcomes.
///
/// Row `j` has precision `diag(theta_j. * iota) + L'L / psi_j` and canonical
/// vector `L' y_j / psi_j`, where `L` holds the scores of the contributing units.
pub fn draw_loadings<R: Rng + ?Sized>(
    rng: &mut R,
    scores: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    psi: &DVector<f64>,
    theta: &DMatrix<f64>,
    iota: &DVector<f64>,
    lambda: &mut DMatrix<f64>,
) -> Result<()> {
    let j = scores.ncols();
    let gram = scores.tr_mul(scores);
    let cross = scores.tr_mul(targets);
    for row in 0..targets.ncols() {
        let mut precision = &gram / psi[row];
        for h in 0..j {
            precision[(h, h)] += theta[(row, h)] * iota[h];
        }
        let canonical = cross.column(row) / psi[row];
        let draw = dist::mvn_from_precision(rng, precision, &canonical, "loadings")?;
        lambda.row_mut(row).copy_from(&draw.transpose());
    }
    Ok(())
}

/// `psi_j ~ IG(a + n/2, b + SSR_j / 2)` from a residual matrix with one row per unit.
pub fn draw_residual_variances<R: Rng + ?Sized>(rng: &mut R, resid: &DMatrix<f64>, a: f64, b: f64, psi: &mut DVector<f64>) {
    let n = resid.nrows() as f64;
    for (j, col) in resid.column_iter().enumerate() {
        let ss = col.norm_squared();
        psi[j] = 1.0 / dist::gamma(rng, a + 0.5 * n, b + 0.5 * ss);
    }
}

/// `theta_jh ~ Gamma((nu + 1)/2, (nu + iota_h lambda_jh^2)/2)`.
pub fn draw_local_precisions<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: &DMatrix<f64>,
    iota: &DVector<f64>,
    nu: f64,
    theta: &mut DMatrix<f64>,
) {
    for h in 0..lambda.ncols() {
        for j in 0..lambda.nrows() {
            let l = lambda[(j, h)];
            theta[(j, h)] = dist::gamma(rng, 0.5 * (nu + 1.0), 0.5 * (nu + iota[h] * l * l));
        }
    }
}

/// Update the increments `delta` one at a time, refreshing `iota` exactly
/// after each draw.
pub fn draw_global_increments<R: Rng + ?Sized>(
    rng: &mut R,
    lambda: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    a1: f64,
    a2: f64,
    delta: &mut DVector<f64>,
    iota: &mut DVector<f64>,
) {
    let (q, j) = lambda.shape();
    let column_mass: Vec<f64> = (0..j)
        .map(|h| (0..q).map(|r| theta[(r, h)] * lambda[(r, h)] * lambda[(r, h)]).sum())
        .collect();
    for l in 0..j {
        let mut rate = 1.0;
        for h in l..j {
            let without: f64 = (0..=h).filter(|&m| m != l).map(|m| delta[m]).product();
            rate += 0.5 * without * column_mass[h];
        }
        let a = if l == 0 { a1 } else { a2 };
        let shape = a + 0.5 * (q * (j - l)) as f64;
        delta[l] = dist::gamma(rng, shape, rate);
        *iota = cumulative_products(delta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let m = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / m;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, var)
    }

    #[test]
    fn local_precision_is_gamma_two_three_and_a_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lambda = DMatrix::from_element(1, 1, 2.0);
        let iota = DVector::from_element(1, 1.0);
        let mut theta = DMatrix::from_element(1, 1, 1.0);
        let m = 100_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| {
                draw_local_precisions(&mut rng, &lambda, &iota, 3.0, &mut theta);
                theta[(0, 0)]
            })
            .collect();
        let (mean, var) = moments(&draws);
        // Gamma(2, rate 3.5): mean 4/7, variance 2/12.25.
        let sd = (2.0f64 / 12.25).sqrt();
        assert!((mean - 4.0 / 7.0).abs() < 3.0 * sd / (m as f64).sqrt());
        assert!((var - 2.0 / 12.25).abs() < 0.01);
    }

    #[test]
    fn first_increment_with_null_loadings() {
        // q = 8, J = 1, zero loadings: delta_0 ~ Gamma(2.1 + 4, 1).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = DMatrix::zeros(8, 1);
        let theta = DMatrix::from_element(8, 1, 1.0);
        let mut delta = DVector::from_element(1, 1.0);
        let mut iota = delta.clone();
        let m = 100_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| {
                draw_global_increments(&mut rng, &lambda, &theta, 2.1, 3.1, &mut delta, &mut iota);
                delta[0]
            })
            .collect();
        let (mean, var) = moments(&draws);
        assert!((mean - 6.1).abs() < 3.0 * 6.1f64.sqrt() / (m as f64).sqrt());
        assert!((var - 6.1).abs() < 0.15);
        assert_eq!(iota[0], delta[0]);
    }

    #[test]
    fn increments_keep_iota_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = DMatrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let theta = DMatrix::from_element(5, 4, 1.5);
        let mut delta = DVector::from_element(4, 1.0);
        let mut iota = delta.clone();
        for _ in 0..50 {
            draw_global_increments(&mut rng, &lambda, &theta, 2.1, 3.1, &mut delta, &mut iota);
            let mut acc = 1.0;
            for h in 0..4 {
                acc *= delta[h];
                assert_eq!(iota[h], acc);
            }
        }
    }

    #[test]
    fn increment_rate_uses_partial_products() {
        // J = 2, q = 1. Column masses c0 = 1, c1 = 4 (theta = 1, lambda = 1, 2).
        // delta_1 has rate 1 + delta_0 * c1 / 2 and shape a2 + 1/2.
        let lambda = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let theta = DMatrix::from_element(1, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 60_000;
        let mut acc = 0.0;
        let mut expect = 0.0;
        let mut delta = DVector::from_vec(vec![1.0, 1.0]);
        let mut iota = cumulative_products(&delta);
        for _ in 0..m {
            draw_global_increments(&mut rng, &lambda, &theta, 2.1, 3.1, &mut delta, &mut iota);
            acc += delta[1];
            // Conditional mean given the delta_0 just drawn.
            expect += 3.6 / (1.0 + 0.5 * iota[0] * 4.0);
        }
        let rel = (acc - expect) / expect;
        assert!(rel.abs() < 0.01, "{rel}");
    }

    #[test]
    fn shrinkage_grows_with_column_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lambda = DMatrix::zeros(4, 5);
        let theta = DMatrix::from_element(4, 5, 1.0);
        let mut delta = DVector::from_element(5, 1.0);
        let mut iota = delta.clone();
        let mut sums = vec![0.0; 5];
        for _ in 0..5_000 {
            draw_global_increments(&mut rng, &lambda, &theta, 2.1, 3.1, &mut delta, &mut iota);
            for h in 0..5 {
                sums[h] += iota[h].ln();
            }
        }
        for h in 1..5 {
            assert!(sums[h] > sums[h - 1]);
        }
    }

    #[test]
    fn scalar_loading_posterior() {
        // 100 units with score 1 and target 2, psi = 1, prior precision 1:
        // posterior N(200/101, 1/101).
        let scores = DMatrix::from_element(100, 1, 1.0);
        let targets = DMatrix::from_element(100, 1, 2.0);
        let psi = DVector::from_element(1, 1.0);
        let theta = DMatrix::from_element(1, 1, 1.0);
        let iota = DVector::from_element(1, 1.0);
        let mut lambda = DMatrix::zeros(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 100_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| {
                draw_loadings(&mut rng, &scores, &targets, &psi, &theta, &iota, &mut lambda).unwrap();
                lambda[(0, 0)]
            })
            .collect();
        let (mean, var) = moments(&draws);
        let sd = (1.0f64 / 101.0).sqrt();
        assert!((mean - 200.0 / 101.0).abs() < 3.0 * sd / (m as f64).sqrt());
        assert!((var - 1.0 / 101.0).abs() < 3.0 * (1.0 / 101.0) * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn loading_rows_match_least_squares_under_vague_prior() {
        let n = 400;
        let scores = DMatrix::from_fn(n, 2, |i, h| ((i * (h + 3)) as f64 * 0.61).sin());
        let truth = DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.0, 2.0, 0.7, 0.7]);
        let targets = &scores * truth.transpose();
        let psi = DVector::from_element(3, 1e-4);
        let theta = DMatrix::from_element(3, 2, 1e-6);
        let iota = DVector::from_element(2, 1.0);
        let mut lambda = DMatrix::zeros(3, 2);
        draw_loadings(&mut ChaCha8Rng::seed_from_u64(7), &scores, &targets, &psi, &theta, &iota, &mut lambda).unwrap();
        assert!((&lambda - &truth).amax() < 0.01);
    }

    #[test]
    fn residual_variance_posterior_mean() {
        let n = 500;
        let resid = DMatrix::from_fn(n, 2, |i, j| ((i as f64) * 0.37 + j as f64).sin() * (1.0 + j as f64));
        let mut psi = DVector::from_element(2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 20_000;
        let mut sums = [0.0; 2];
        for _ in 0..m {
            draw_residual_variances(&mut rng, &resid, 1.0, 1.0, &mut psi);
            sums[0] += psi[0];
            sums[1] += psi[1];
        }
        for j in 0..2 {
            let ss = resid.column(j).norm_squared();
            // Inverse-gamma mean b' / (a' - 1).
            let exact = (1.0 + 0.5 * ss) / (1.0 + 0.5 * n as f64 - 1.0);
            assert!(((sums[j] / m as f64) - exact).abs() / exact < 0.005);
        }
    }
}
