//! Synthetic scenarios with known potential outcomes.
//!
//! Every scenario draws confounders `X`, an optional unmeasured `U`, a
//! treatment from a clipped logistic index, clustered factor scores for
//! both arms and both potential outcomes for every unit. Scenario 4 uses a
//! fixed loading matrix shipped with the crate and 28 confounders.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist;
use crate::error::{CfmError, Result};
use crate::estimands::quantile_sorted;

/// How the unmeasured variable enters a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ULinkage {
    /// `U` independent of `X`, acting on the scores.
    Independent,
    /// `U` drawn given `X`.
    DependsOnX,
    /// The first two confounders drawn given `U`.
    CausesX,
    /// No unmeasured variable.
    None,
    /// `U` independent of `X`, acting on the scores and directly on `Y`.
    DirectOnY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingRegime {
    /// Nonzero magnitudes in `[0.8, 1]`.
    Strong,
    /// Nonzero magnitudes in `[0.05, 0.15]`.
    Weak,
    /// The shipped 27 x 3 block-structured matrices.
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub n: usize,
    pub q: usize,
    pub p: usize,
    /// Factors per arm.
    pub j: usize,
    /// Cluster count of each factor.
    pub clusters: Vec<usize>,
    pub linkage: ULinkage,
    pub nonlinear: bool,
    pub loadings: LoadingRegime,
    /// Slope of the scores on `U`.
    pub gamma: f64,
    pub rng_seed: u64,
}

const FIXTURE: &str = include_str!("../fixtures/scenario4_loadings_v1.csv");
const SCENARIO4_N: usize = 3426;
const SCENARIO4_CONTINUOUS: usize = 20;
const SCENARIO4_BINARY: usize = 8;

fn alternating_clusters(j: usize) -> Vec<usize> {
    (0..j).map(|h| if h % 2 == 0 { 3 } else { 2 }).collect()
}

impl ScenarioSpec {
    /// Reduced sizes used for quick studies: `n = 300`, `q = 6`, two factors.
    /// Scenario 4 keeps its full dimensions.
    pub fn desk(id: u8, rng_seed: u64) -> Result<Self> {
        Self::sized(id, 300, 6, 2, rng_seed)
    }

    /// Full sizes: `n = 500`, `q = 10`, three factors.
    pub fn paper_scale(id: u8, rng_seed: u64) -> Result<Self> {
        Self::sized(id, 500, 10, 3, rng_seed)
    }

    fn sized(id: u8, n: usize, q: usize, j: usize, rng_seed: u64) -> Result<Self> {
        let base = ScenarioSpec {
            id,
            n,
            q,
            p: 4,
            j,
            clusters: alternating_clusters(j),
            linkage: ULinkage::Independent,
            nonlinear: false,
            loadings: LoadingRegime::Strong,
            gamma: 0.8,
            rng_seed,
        };
        let spec = match id {
            1 => base,
            2 => ScenarioSpec { linkage: ULinkage::DependsOnX, ..base },
            3 => ScenarioSpec { linkage: ULinkage::CausesX, ..base },
            4 => ScenarioSpec {
                n: SCENARIO4_N,
                q: 27,
                p: SCENARIO4_CONTINUOUS + SCENARIO4_BINARY,
                j: 3,
                clusters: alternating_clusters(3),
                linkage: ULinkage::None,
                loadings: LoadingRegime::Fixture,
                gamma: 0.0,
                ..base
            },
            5 => ScenarioSpec { nonlinear: true, loadings: LoadingRegime::Weak, ..base },
            6 => ScenarioSpec { linkage: ULinkage::DirectOnY, ..base },
            other => return Err(CfmError::Config(format!("unknown scenario {other}; expected 1-6"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.q < 1 || self.p < 4 || self.j < 1 {
            return Err(CfmError::Config("scenario dimensions too small".into()));
        }
        if self.clusters.len() != self.j || self.clusters.iter().any(|&c| !(2..=3).contains(&c)) {
            return Err(CfmError::Config("each factor needs 2 or 3 clusters".into()));
        }
        if self.loadings == LoadingRegime::Fixture && (self.q != 27 || self.j != 3) {
            return Err(CfmError::Config("fixture loadings are 27 x 3".into()));
        }
        if self.id == 4 && self.p != SCENARIO4_CONTINUOUS + SCENARIO4_BINARY {
            return Err(CfmError::Config("scenario 4 has 28 confounders".into()));
        }
        Ok(())
    }
}

/// Parameters of one arm's generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTruth {
    /// `q x p` linear coefficients (empty columns for nonlinear means).
    pub b: Vec<Vec<f64>>,
    /// `q x 7` coefficients of the nonlinear mean, when used.
    pub nonlinear_beta: Option<Vec<Vec<f64>>>,
    pub lambda: Vec<Vec<f64>>,
    /// Direct effect of `U` on each outcome, when used.
    pub beta_u: Option<Vec<f64>>,
}

/// The record written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: ScenarioSpec,
    pub sate: Vec<f64>,
    /// Standard deviation over units of the observed outcome minus its
    /// mean function; the unit in which bias is judged.
    pub residual_sd: Vec<f64>,
    pub arms: Vec<ArmTruth>,
    pub cluster_means: Vec<Vec<f64>>,
    /// Plain-text description of each linkage function used.
    pub linkage: Vec<(String, String)>,
}

/// A simulated dataset together with everything that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedTruth {
    pub spec: ScenarioSpec,
    pub data: Dataset,
    pub y0: DMatrix<f64>,
    pub y1: DMatrix<f64>,
    pub sate: DVector<f64>,
    pub residual_sd: DVector<f64>,
    pub u: Option<DVector<f64>>,
    pub propensity: Vec<f64>,
    pub clusters: DMatrix<usize>,
    pub scores: [DMatrix<f64>; 2],
    pub lambda: [DMatrix<f64>; 2],
    pub b: [DMatrix<f64>; 2],
    pub nonlinear_beta: Option<[DMatrix<f64>; 2]>,
    pub beta_u: Option<[DVector<f64>; 2]>,
    /// Mean function of each arm evaluated at every unit.
    pub mean_surface: [DMatrix<f64>; 2],
    pub linkage: Vec<(String, String)>,
}

impl SimulatedTruth {
    pub fn record(&self) -> TruthRecord {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        let arms = (0..2)
            .map(|t| ArmTruth {
                b: rows(&self.b[t]),
                nonlinear_beta: self.nonlinear_beta.as_ref().map(|nb| rows(&nb[t])),
                lambda: rows(&self.lambda[t]),
                beta_u: self.beta_u.as_ref().map(|bu| bu[t].iter().copied().collect()),
            })
            .collect();
        TruthRecord {
            spec: self.spec.clone(),
            sate: self.sate.iter().copied().collect(),
            residual_sd: self.residual_sd.iter().copied().collect(),
            arms,
            cluster_means: self.spec.clusters.iter().map(|&c| cluster_means(c).to_vec()).collect(),
            linkage: self.linkage.clone(),
        }
    }
}

/// `g(x) = b0 + b1 e^{x1} + b2 x2^2 + b3 x3 + b4 x4 + b5 [x3 = 1, x4 = 1] + b6 [x3 = 0, x4 = 0]`
/// with binary `x3`, `x4`.
pub fn nonlinear_mean(x: &[f64], beta: &[f64]) -> f64 {
    let both = (x[2] == 1.0 && x[3] == 1.0) as u8 as f64;
    let neither = (x[2] == 0.0 && x[3] == 0.0) as u8 as f64;
    beta[0] + beta[1] * x[0].exp() + beta[2] * x[1] * x[1] + beta[3] * x[2] + beta[4] * x[3] + beta[5] * both + beta[6] * neither
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn cluster_means(c: usize) -> &'static [f64] {
    if c == 3 {
        &[-2.0, 0.0, 2.0]
    } else {
        &[-1.5, 1.5]
    }
}

/// Confounder driving the clusters of factor `h`: `X1`, `X2`, `X1 - X2`, cycling.
fn cluster_driver(x: &DMatrix<f64>, h: usize) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| match h % 3 {
            0 => x[(i, 0)],
            1 => x[(i, 1)],
            _ => x[(i, 0)] - x[(i, 1)],
        })
        .collect()
}

/// Cluster labels from the sample tertiles (3 clusters) or median (2).
fn threshold_clusters(driver: &[f64], c: usize) -> Vec<usize> {
    let mut sorted = driver.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..c).map(|k| quantile_sorted(&sorted, k as f64 / c as f64)).collect();
    driver.iter().map(|v| cuts.iter().filter(|&&cut| *v > cut).count()).collect()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Loadings with a quarter of the entries exactly zero and the rest of
/// random sign with magnitude in `[lo, hi]`.
fn sparse_loadings<R: Rng + ?Sized>(rng: &mut R, q: usize, j: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let total = q * j;
    let zeros = (total as f64 * 0.25).round() as usize;
    let mut zero = vec![false; total];
    for k in sample(rng, total, zeros) {
        zero[k] = true;
    }
    DMatrix::from_fn(q, j, |r, c| {
        if zero[r * j + c] {
            0.0
        } else {
            let magnitude = uniform(rng, lo, hi);
            if rng.random_bool(0.5) {
                -magnitude
            } else {
                magnitude
            }
        }
    })
}

/// The shipped loading matrices of both arms.
pub fn fixture_loadings() -> [DMatrix<f64>; 2] {
    let rows: Vec<Vec<f64>> = FIXTURE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').skip(1).map(|v| v.trim().parse::<f64>().expect("fixture value")).collect())
        .collect();
    let q = rows.len();
    [0, 1].map(|t| DMatrix::from_fn(q, 3, |r, c| rows[r][3 * t + c]))
}

fn linkage_notes(spec: &ScenarioSpec) -> Vec<(String, String)> {
    let mut notes = vec![(
        "f_C".to_string(),
        "factor h clustered on X1, X2, X1-X2 (cycling) at sample tertiles (3 clusters) or median (2)".to_string(),
    )];
    let f_t = if spec.id == 4 {
        "T ~ Be(clip(logistic(0.3 (X1 - X2 + X21 - X22)), 0.02, 0.98))"
    } else {
        "T ~ Be(clip(logistic(0.3 (X1 - X2 + X3 - X4 + 0.5 U)), 0.02, 0.98))"
    };
    notes.push(("f_T".into(), f_t.into()));
    match spec.linkage {
        ULinkage::DependsOnX => notes.push(("f_U".into(), "U ~ N(0.5 (X1 + X2 - X3 + X4), var 0.5)".into())),
        ULinkage::CausesX => notes.push(("f_k".into(), "X1, X2 ~ N(0.7 U, 1); U ~ N(0, var 2)".into())),
        ULinkage::None => {}
        _ => notes.push(("U".into(), "U ~ N(0, var 2), independent of X".into())),
    }
    if spec.linkage == ULinkage::DirectOnY {
        notes.push(("beta_u".into(), "Y(t) gains beta_tu U, beta_tu ~ Unif[0.5, 1.5] per outcome".into()));
    }
    notes
}

/// Draw one dataset and its ground truth.
pub fn generate(spec: &ScenarioSpec) -> Result<SimulatedTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (n, q, p, j) = (spec.n, spec.q, spec.p, spec.j);

    // Arm parameters.
    let lambda = match spec.loadings {
        LoadingRegime::Strong => [0, 1].map(|_| sparse_loadings(&mut rng, q, j, 0.8, 1.0)),
        LoadingRegime::Weak => [0, 1].map(|_| sparse_loadings(&mut rng, q, j, 0.05, 0.15)),
        LoadingRegime::Fixture => fixture_loadings(),
    };
    let b = [0.0, 1.0].map(|t| DMatrix::from_fn(q, p, |_, _| uniform(&mut rng, -3.0 + t, 2.0 + t)));
    let nonlinear_beta = spec
        .nonlinear
        .then(|| [0.0, 1.0].map(|t| DMatrix::from_fn(q, 7, |_, _| uniform(&mut rng, -3.0 + t, 2.0 + t))));
    let beta_u = (spec.linkage == ULinkage::DirectOnY)
        .then(|| [0, 1].map(|_| DVector::from_fn(q, |_, _| uniform(&mut rng, 0.5, 1.5))));

    // Units.
    let has_u = spec.linkage != ULinkage::None;
    let mut x = DMatrix::zeros(n, p);
    let mut u = DVector::zeros(n);
    for i in 0..n {
        if spec.id == 4 {
            for k in 0..SCENARIO4_CONTINUOUS {
                x[(i, k)] = dist::standard_normal(&mut rng);
            }
            for k in 0..SCENARIO4_BINARY {
                let prob = 0.3 + 0.05 * k as f64;
                x[(i, SCENARIO4_CONTINUOUS + k)] = rng.random_bool(prob) as u8 as f64;
            }
            continue;
        }
        let ui = match spec.linkage {
            ULinkage::CausesX | ULinkage::Independent | ULinkage::DirectOnY => dist::normal(&mut rng, 0.0, 2f64.sqrt()),
            _ => 0.0,
        };
        let (x1, x2) = if spec.linkage == ULinkage::CausesX {
            (dist::normal(&mut rng, 0.7 * ui, 1.0), dist::normal(&mut rng, 0.7 * ui, 1.0))
        } else {
            (dist::standard_normal(&mut rng), dist::standard_normal(&mut rng))
        };
        let x3 = rng.random_bool(0.4) as u8 as f64;
        let x4 = rng.random_bool(0.6) as u8 as f64;
        let ui = if spec.linkage == ULinkage::DependsOnX {
            dist::normal(&mut rng, 0.5 * (x1 + x2 - x3 + x4), 0.5f64.sqrt())
        } else {
            ui
        };
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        x[(i, 2)] = x3;
        x[(i, 3)] = x4;
        for k in 4..p {
            x[(i, k)] = dist::standard_normal(&mut rng);
        }
        u[i] = ui;
    }

    let propensity: Vec<f64> = (0..n)
        .map(|i| {
            let index = if spec.id == 4 {
                0.3 * (x[(i, 0)] - x[(i, 1)] + x[(i, SCENARIO4_CONTINUOUS)] - x[(i, SCENARIO4_CONTINUOUS + 1)])
            } else {
                0.3 * (x[(i, 0)] - x[(i, 1)] + x[(i, 2)] - x[(i, 3)] + 0.5 * u[i])
            };
            logistic(index).clamp(0.02, 0.98)
        })
        .collect();
    let t: Vec<u8> = propensity.iter().map(|&e| rng.random_bool(e) as u8).collect();

    let mut clusters = DMatrix::zeros(n, j);
    for h in 0..j {
        for (i, c) in threshold_clusters(&cluster_driver(&x, h), spec.clusters[h]).into_iter().enumerate() {
            clusters[(i, h)] = c;
        }
    }
    let scores = [0, 1].map(|_| {
        DMatrix::from_fn(n, j, |i, h| {
            let mu = cluster_means(spec.clusters[h])[clusters[(i, h)]];
            mu + spec.gamma * u[i] + dist::standard_normal(&mut rng)
        })
    });

    let mean_surface = [0, 1].map(|t| {
        DMatrix::from_fn(n, q, |i, k| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let mut m = match &nonlinear_beta {
                Some(nb) => nonlinear_mean(&xi, &nb[t].row(k).iter().copied().collect::<Vec<_>>()),
                None => (0..p).map(|c| b[t][(k, c)] * xi[c]).sum(),
            };
            if let Some(bu) = &beta_u {
                m += bu[t][k] * u[i];
            }
            m
        })
    });
    let potential = [0, 1].map(|t| {
        let signal = &scores[t] * lambda[t].transpose();
        DMatrix::from_fn(n, q, |i, k| mean_surface[t][(i, k)] + signal[(i, k)] + uniform(&mut rng, 0.0, 1.0))
    });
    let [y0, y1] = potential;
    let y = DMatrix::from_fn(n, q, |i, k| if t[i] == 1 { y1[(i, k)] } else { y0[(i, k)] });
    let sate = DVector::from_fn(q, |k, _| (0..n).map(|i| y1[(i, k)] - y0[(i, k)]).sum::<f64>() / n as f64);

    // Residual scale excludes the direct U effect from the mean function, so
    // it measures everything a covariate regression cannot explain.
    let residual_sd = DVector::from_fn(q, |k, _| {
        let r: Vec<f64> = (0..n)
            .map(|i| {
                let arm = t[i] as usize;
                let direct = beta_u.as_ref().map_or(0.0, |bu| bu[arm][k] * u[i]);
                y[(i, k)] - (mean_surface[arm][(i, k)] - direct)
            })
            .collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });

    let data = Dataset::new(
        (1..=n).map(|i| i.to_string()).collect(),
        (1..=q).map(|k| format!("y_{k}")).collect(),
        (1..=p).map(|k| format!("x_{k}")).collect(),
        y,
        t,
        x,
    )?;
    Ok(SimulatedTruth {
        spec: spec.clone(),
        data,
        y0,
        y1,
        sate,
        residual_sd,
        u: has_u.then_some(u),
        propensity,
        clusters,
        scores,
        lambda,
        b,
        nonlinear_beta,
        beta_u,
        mean_surface,
        linkage: linkage_notes(spec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn nonlinear_mean_hand_values() {
        let ones = [1.0; 7];
        assert_eq!(nonlinear_mean(&[0.0, 0.0, 0.0, 0.0], &ones), 3.0);
        assert_eq!(nonlinear_mean(&[0.0, 2.0, 1.0, 1.0], &ones), 9.0);
        assert_eq!(nonlinear_mean(&[0.3, -1.0, 1.0, 0.0], &[0.0; 7]), 0.0);
    }

    #[test]
    fn table_dimensions() {
        let s1 = generate(&ScenarioSpec::paper_scale(1, 1).unwrap()).unwrap();
        assert_eq!((s1.data.n(), s1.data.q(), s1.data.p()), (500, 10, 4));
        assert_eq!(s1.lambda[0].ncols(), 3);
        let s4 = generate(&ScenarioSpec::desk(4, 1).unwrap()).unwrap();
        assert_eq!((s4.data.n(), s4.data.q(), s4.data.p()), (3426, 27, 28));
        assert!(ScenarioSpec::desk(7, 1).is_err());
    }

    #[test]
    fn observed_outcomes_are_consistent() {
        for id in 1..=6 {
            let s = generate(&ScenarioSpec::desk(id, 3).unwrap()).unwrap();
            for i in 0..s.data.n() {
                let src = if s.data.t[i] == 1 { &s.y1 } else { &s.y0 };
                for k in 0..s.data.q() {
                    assert_eq!(s.data.y[(i, k)], src[(i, k)]);
                }
            }
            let direct: DVector<f64> = (&s.y1 - &s.y0).row_mean().transpose();
            assert!((direct - &s.sate).amax() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&ScenarioSpec::desk(2, 9).unwrap()).unwrap();
        let b = generate(&ScenarioSpec::desk(2, 9).unwrap()).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.record(), b.record());
    }

    #[test]
    fn quarter_of_loadings_are_zero() {
        let s = generate(&ScenarioSpec::paper_scale(1, 4).unwrap()).unwrap();
        for lam in &s.lambda {
            let zeros = lam.iter().filter(|v| **v == 0.0).count();
            assert_eq!(zeros, 8); // round(0.25 * 30)
            assert!(lam.iter().filter(|v| **v != 0.0).all(|v| (0.8..=1.0).contains(&v.abs())));
        }
    }

    #[test]
    fn propensities_are_clipped() {
        for id in 1..=6 {
            let s = generate(&ScenarioSpec::desk(id, 5).unwrap()).unwrap();
            assert!(s.propensity.iter().all(|&e| (0.02..=0.98).contains(&e)));
        }
    }

    #[test]
    fn independent_u_is_uncorrelated_with_x() {
        let spec = ScenarioSpec { n: 5000, ..ScenarioSpec::desk(1, 6).unwrap() };
        let s = generate(&spec).unwrap();
        let u: Vec<f64> = s.u.unwrap().iter().copied().collect();
        for k in 0..4 {
            let xk: Vec<f64> = s.data.x_raw.column(k).iter().copied().collect();
            assert!(corr(&u, &xk).abs() < 0.1);
        }
    }

    #[test]
    fn linkage_directions() {
        let big = |id| generate(&ScenarioSpec { n: 5000, ..ScenarioSpec::desk(id, 7).unwrap() }).unwrap();
        for id in [2, 3] {
            let s = big(id);
            let u: Vec<f64> = s.u.unwrap().iter().copied().collect();
            let x1: Vec<f64> = s.data.x_raw.column(0).iter().copied().collect();
            assert!(corr(&u, &x1) > 0.3, "scenario {id}");
        }
    }

    fn mean_abs_corr(m: &DMatrix<f64>) -> f64 {
        let cols: Vec<Vec<f64>> = m.column_iter().map(|c| c.iter().copied().collect()).collect();
        let mut total = 0.0;
        let mut pairs = 0.0;
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                total += corr(&cols[a], &cols[b]).abs();
                pairs += 1.0;
            }
        }
        total / pairs
    }

    #[test]
    fn weak_loadings_weaken_outcome_correlation() {
        // Correlation among the factor-driven parts of the outcomes, pooled
        // over datasets, drops by more than half in the weak regime.
        let pooled = |id: u8| {
            (0..5)
                .map(|seed| {
                    let s = generate(&ScenarioSpec { n: 5000, ..ScenarioSpec::desk(id, seed).unwrap() }).unwrap();
                    mean_abs_corr(&(&s.y0 - &s.mean_surface[0]))
                })
                .sum::<f64>()
                / 5.0
        };
        let (strong, weak) = (pooled(1), pooled(5));
        assert!(weak < 0.5 * strong, "{weak} vs {strong}");
    }

    #[test]
    fn direct_u_effect_recovered_by_least_squares() {
        let spec = ScenarioSpec { n: 4000, ..ScenarioSpec::desk(6, 10).unwrap() };
        let s = generate(&spec).unwrap();
        let u = s.u.clone().unwrap();
        let bu = s.beta_u.clone().unwrap();
        for t in 0..2 {
            let yt = if t == 0 { &s.y0 } else { &s.y1 };
            let linear = &s.data.x_raw * s.b[t].transpose();
            let signal = &s.scores[t] * s.lambda[t].transpose();
            for k in 0..spec.q {
                // Remaining noise is Unif[0, 1]: regress on (1, U).
                let r: Vec<f64> = (0..spec.n).map(|i| yt[(i, k)] - linear[(i, k)] - signal[(i, k)]).collect();
                let um = u.mean();
                let rm = r.iter().sum::<f64>() / spec.n as f64;
                let sxy: f64 = (0..spec.n).map(|i| (u[i] - um) * (r[i] - rm)).sum();
                let sxx: f64 = u.iter().map(|v| (v - um).powi(2)).sum();
                let slope = sxy / sxx;
                let se = (1.0f64 / 12.0 / sxx).sqrt();
                assert!((slope - bu[t][k]).abs() < 4.0 * se, "arm {t} outcome {k}");
            }
        }
    }

    #[test]
    fn clusters_follow_thresholds() {
        let s = generate(&ScenarioSpec::desk(1, 11).unwrap()).unwrap();
        let counts = |h: usize, c: usize| (0..s.data.n()).filter(|&i| s.clusters[(i, h)] == c).count();
        for c in 0..3 {
            assert!((counts(0, c) as i64 - 100).abs() <= 1);
        }
        assert_eq!(counts(1, 0), 150);
        assert_eq!(s.clusters.iter().copied().max(), Some(2));
    }

    #[test]
    fn fixture_has_block_structure() {
        let [l0, l1] = fixture_loadings();
        assert_eq!(l0.shape(), (27, 3));
        for lam in [&l0, &l1] {
            for r in 0..27 {
                let block = if r < 14 { 0 } else if r < 20 { 1 } else { 2 };
                let dominant = (0..3).max_by(|&a, &b| lam[(r, a)].abs().total_cmp(&lam[(r, b)].abs())).unwrap();
                assert_eq!(dominant, block, "row {r}");
            }
        }
    }
}
