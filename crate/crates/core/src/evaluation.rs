//! Replicate metrics, varimax rotation, variance shares, loading alignment
//! and chain diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CfmError, Result};
use crate::estimands::EffectSummary;

/// Errors of one method on one replicate, per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub method: String,
    pub bias: Vec<f64>,
    pub sq_error: Vec<f64>,
    pub covered: Vec<bool>,
}

impl ReplicateMetrics {
    /// Score a posterior summary against the true effects.
    pub fn from_summary(method: &str, summary: &EffectSummary, truth: &[f64]) -> Result<Self> {
        if summary.outcomes.len() != truth.len() {
            return Err(CfmError::Validation(format!(
                "summary has {} outcomes, truth has {}",
                summary.outcomes.len(),
                truth.len()
            )));
        }
        let bias: Vec<f64> = summary.outcomes.iter().zip(truth).map(|(o, t)| o.mean - t).collect();
        Ok(ReplicateMetrics {
            method: method.to_string(),
            sq_error: bias.iter().map(|b| b * b).collect(),
            covered: summary.outcomes.iter().zip(truth).map(|(o, t)| o.lo <= *t && *t <= o.hi).collect(),
            bias,
        })
    }
}

/// Per-outcome averages over replicates of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub method: String,
    pub replicates: usize,
    pub mean_bias: Vec<f64>,
    pub mse: Vec<f64>,
    pub coverage: Vec<f64>,
}

pub fn aggregate_metrics(reps: &[ReplicateMetrics]) -> Result<AggregateMetrics> {
    let first = reps.first().ok_or_else(|| CfmError::Validation("no replicates to aggregate".into()))?;
    let q = first.bias.len();
    if reps.iter().any(|r| r.bias.len() != q) {
        return Err(CfmError::Validation("replicates disagree on outcome count".into()));
    }
    let r = reps.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateMetrics, usize) -> f64| -> Vec<f64> {
        (0..q).map(|k| reps.iter().map(|rep| f(rep, k)).sum::<f64>() / r).collect()
    };
    Ok(AggregateMetrics {
        method: first.method.clone(),
        replicates: reps.len(),
        mean_bias: mean(&|rep, k| rep.bias[k]),
        mse: mean(&|rep, k| rep.sq_error[k]),
        coverage: mean(&|rep, k| rep.covered[k] as u8 as f64),
    })
}

/// Varimax criterion `sum_h [ mean_j l_jh^4 - (mean_j l_jh^2)^2 ]`.
pub fn varimax_criterion(lambda: &DMatrix<f64>) -> f64 {
    let q = lambda.nrows() as f64;
    lambda
        .column_iter()
        .map(|c| {
            let m2 = c.iter().map(|v| v * v).sum::<f64>() / q;
            let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / q;
            m4 - m2 * m2
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Varimax {
    pub rotated: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Rotate columns `a`, `b` of `m` by angle `phi`.
fn rotate_pair(m: &mut DMatrix<f64>, a: usize, b: usize, phi: f64) {
    let (s, c) = phi.sin_cos();
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, a)], m[(i, b)]);
        m[(i, a)] = c * x + s * y;
        m[(i, b)] = -s * x + c * y;
    }
}

/// Angle maximising the varimax criterion of the column pair `(x, y)`.
fn pair_angle(lambda: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let q = lambda.nrows() as f64;
    let (mut sa, mut sb, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..lambda.nrows() {
        let (x, y) = (lambda[(i, a)], lambda[(i, b)]);
        let u = x * x - y * y;
        let v = 2.0 * x * y;
        sa += u;
        sb += v;
        sc += u * u - v * v;
        sd += 2.0 * u * v;
    }
    0.25 * (sd - 2.0 * sa * sb / q).atan2(sc - (sa * sa - sb * sb) / q)
}

/// Orthogonal varimax rotation by cyclic pairwise plane rotations, each at
/// its closed-form optimal angle. With `kaiser`, rows are scaled to unit
/// length during the search.
pub fn varimax(lambda: &DMatrix<f64>, tol: f64, max_iter: usize, kaiser: bool) -> Varimax {
    let (q, j) = lambda.shape();
    let norms: Vec<f64> = (0..q)
        .map(|i| if kaiser { lambda.row(i).norm().max(f64::MIN_POSITIVE) } else { 1.0 })
        .collect();
    let mut work = DMatrix::from_fn(q, j, |i, h| lambda[(i, h)] / norms[i]);
    let mut rotation = DMatrix::identity(j, j);
    let mut criterion = varimax_criterion(&work);
    let mut sweeps = 0;
    let mut converged = j < 2;
    while !converged && sweeps < max_iter {
        sweeps += 1;
        for a in 0..j {
            for b in a + 1..j {
                let phi = pair_angle(&work, a, b);
                rotate_pair(&mut work, a, b, phi);
                rotate_pair(&mut rotation, a, b, phi);
            }
        }
        let next = varimax_criterion(&work);
        converged = next - criterion < tol;
        criterion = next;
    }
    let rotated = DMatrix::from_fn(q, j, |i, h| work[(i, h)] * norms[i]);
    Varimax { rotated, rotation, sweeps, converged }
}

/// Share of total variance carried by each factor and in total.
pub fn variance_explained(lambda: &DMatrix<f64>, psi: &DVector<f64>) -> (Vec<f64>, f64) {
    let col: Vec<f64> = lambda.column_iter().map(|c| c.norm_squared()).collect();
    let total = col.iter().sum::<f64>() + psi.sum();
    let shares: Vec<f64> = col.iter().map(|c| if total > 0.0 { c / total } else { 0.0 }).collect();
    let sum = shares.iter().sum();
    (shares, sum)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Column matching of an estimate to a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `columns[h]` is the estimate column matched to reference column `h`.
    pub columns: Vec<usize>,
    pub signs: Vec<f64>,
    /// `|corr|` of each matched pair, in reference column order.
    pub correlations: Vec<f64>,
}

impl Alignment {
    /// The estimate with columns permuted and signs flipped onto the reference.
    pub fn apply(&self, estimate: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(estimate.nrows(), self.columns.len(), |i, h| self.signs[h] * estimate[(i, self.columns[h])])
    }
}

/// Greedy matching of columns by largest absolute Pearson correlation.
/// The estimate may carry more columns than the reference; unmatched ones
/// are dropped.
pub fn align_loadings(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Alignment> {
    if estimate.nrows() != truth.nrows() || estimate.ncols() < truth.ncols() {
        return Err(CfmError::Validation(format!(
            "cannot align a {}x{} estimate to a {}x{} reference",
            estimate.nrows(),
            estimate.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let (j, je) = (truth.ncols(), estimate.ncols());
    let cols = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.column_iter().map(|c| c.iter().copied().collect()).collect() };
    let (est, tru) = (cols(estimate), cols(truth));
    let corr: Vec<Vec<f64>> = tru.iter().map(|t| est.iter().map(|e| pearson(e, t)).collect()).collect();
    let mut columns = vec![usize::MAX; j];
    let mut signs = vec![1.0; j];
    let mut correlations = vec![0.0; j];
    let mut used_t = vec![false; j];
    let mut used_e = vec![false; je];
    for _ in 0..j {
        let mut best = (0, 0, -1.0);
        for h in (0..j).filter(|&h| !used_t[h]) {
            for g in (0..je).filter(|&g| !used_e[g]) {
                if corr[h][g].abs() > best.2 {
                    best = (h, g, corr[h][g].abs());
                }
            }
        }
        let (h, g, c) = best;
        used_t[h] = true;
        used_e[g] = true;
        columns[h] = g;
        signs[h] = if corr[h][g] < 0.0 { -1.0 } else { 1.0 };
        correlations[h] = c;
    }
    Ok(Alignment { columns, signs, correlations })
}

/// Element-wise mean of loading draws after aligning each to the last draw.
pub fn aligned_posterior_mean(draws: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let reference = draws.last().ok_or_else(|| CfmError::Validation("no loading draws".into()))?;
    let mut acc = DMatrix::zeros(reference.nrows(), reference.ncols());
    for d in draws {
        acc += align_loadings(d, reference)?.apply(d);
    }
    Ok(acc / draws.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The sequence had zero variance; `value` is then the draw count.
    pub constant: bool,
}

/// Effective sample size by Geyer's initial positive sequence, capped at the
/// number of draws.
pub fn effective_sample_size(draws: &[f64]) -> Result<Ess> {
    let m = draws.len();
    if m < 10 {
        return Err(CfmError::Validation(format!("effective sample size needs at least 10 draws, got {m}")));
    }
    let mean = draws.iter().sum::<f64>() / m as f64;
    let centered: Vec<f64> = draws.iter().map(|d| d - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..m - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / m as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return Ok(Ess { value: m as f64, constant: true });
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < m {
        let pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    let value = (m as f64 / tau.max(f64::MIN_POSITIVE)).min(m as f64);
    Ok(Ess { value, constant: false })
}

/// Potential scale reduction for two chains of equal length.
pub fn two_chain_rhat(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len().min(b.len()) as f64;
    let stats = |c: &[f64]| {
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0);
        (mean, var)
    };
    let ((ma, va), (mb, vb)) = (stats(a), stats(b));
    let w = 0.5 * (va + vb);
    let grand = 0.5 * (ma + mb);
    let between = m * ((ma - grand).powi(2) + (mb - grand).powi(2));
    (((m - 1.0) / m * w + between / m) / w).sqrt()
}

/// Two-sided Mann-Whitney rank-sum test with tie-corrected normal
/// approximation; returns the p-value.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_a = 0.0;
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut k = i;
        while k + 1 < n && all[k + 1].0 == all[i].0 {
            k += 1;
        }
        let avg = 0.5 * ((i + 1) + (k + 1)) as f64;
        let size = (k - i + 1) as f64;
        ties += size.powi(3) - size;
        rank_a += all[i..=k].iter().filter(|e| e.1).count() as f64 * avg;
        i = k + 1;
    }
    let u = rank_a - n1 * (n1 + 1.0) / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - ties / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - n1 * n2 / 2.0) / var.sqrt();
    (2.0 * crate::dist::norm_cdf(-z.abs())).min(1.0)
}
