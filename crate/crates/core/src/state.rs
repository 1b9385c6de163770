use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::dist;

/// All latent state for one treatment arm.
///
/// Cluster labels are zero-based (`0..l_max`). Scores, labels and the
/// stick-breaking coefficients are indexed by every unit in the dataset:
/// rows of units observed in the other arm hold their latest predictive draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub mu: DVector<f64>,
    /// Regression coefficients, `q x p`.
    pub b: DMatrix<f64>,
    /// Loadings, `q x J`.
    pub lambda: DMatrix<f64>,
    /// Idiosyncratic variances.
    pub psi: DVector<f64>,
    /// Factor scores, `n x J`.
    pub scores: DMatrix<f64>,
    /// Cluster labels, `n x J`.
    pub labels: DMatrix<usize>,
    /// Atom locations, `L x J`.
    pub eta: DMatrix<f64>,
    /// Atom precisions, `L x J`.
    pub tau: DMatrix<f64>,
    /// One `(L - 1) x (p + 1)` coefficient block per factor; column 0 is the intercept.
    pub alpha: Vec<DMatrix<f64>>,
    /// Local loading precisions, `q x J`.
    pub theta: DMatrix<f64>,
    pub delta: DVector<f64>,
    /// Cumulative products of `delta`.
    pub iota: DVector<f64>,
}

impl ArmState {
    pub fn n_factors(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn n_sticks(&self) -> usize {
        self.eta.nrows()
    }

    /// Deterministic initial state: zero regression, `N(0, 0.5^2)` loadings,
    /// standard normal scores, every unit in the first cluster, unit
    /// precisions and increments.
    pub fn initial<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, q: usize, p: usize, j: usize, l: usize) -> Self {
        let lambda = DMatrix::from_fn(q, j, |_, _| dist::normal(rng, 0.0, 0.5));
        let scores = DMatrix::from_fn(n, j, |_, _| dist::standard_normal(rng));
        ArmState {
            mu: DVector::zeros(q),
            b: DMatrix::zeros(q, p),
            lambda,
            psi: DVector::from_element(q, 1.0),
            scores,
            labels: DMatrix::zeros(n, j),
            eta: DMatrix::zeros(l, j),
            tau: DMatrix::from_element(l, j, 1.0),
            alpha: (0..j).map(|_| DMatrix::zeros(l.saturating_sub(1), p + 1)).collect(),
            theta: DMatrix::from_element(q, j, 1.0),
            delta: DVector::from_element(j, 1.0),
            iota: DVector::from_element(j, 1.0),
        }
    }

    /// `iota_h = prod_{m <= h} delta_m`.
    pub fn recompute_iota(&mut self) {
        self.iota = cumulative_products(&self.delta);
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.lambda.iter().all(|v| v.is_finite())
            && self.psi.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.scores.iter().all(|v| v.is_finite())
            && self.eta.iter().all(|v| v.is_finite())
            && self.tau.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.alpha.iter().all(|a| a.iter().all(|v| v.is_finite()))
            && self.theta.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.delta.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.iota.iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

pub(crate) fn cumulative_products(delta: &DVector<f64>) -> DVector<f64> {
    let mut acc = 1.0;
    DVector::from_iterator(
        delta.len(),
        delta.iter().map(|d| {
            acc *= d;
            acc
        }),
    )
}

/// Initial states for arms 0 and 1. The stick count is taken from `cfg.l_max`.
pub fn init_state(data: &Dataset, cfg: &ModelConfig, seed: u64) -> [ArmState; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_state_with(&mut rng, data, cfg.j_max, cfg.l_max)
}

pub(crate) fn init_state_with<R: rand::Rng + ?Sized>(
    rng: &mut R,
    data: &Dataset,
    j: usize,
    l: usize,
) -> [ArmState; 2] {
    let a0 = ArmState::initial(rng, data.n(), data.q(), data.p(), j, l);
    let a1 = ArmState::initial(rng, data.n(), data.q(), data.p(), j, l);
    [a0, a1]
}
