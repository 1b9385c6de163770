//! Joint-distribution check of the sampler: draws of (parameters, data)
//! from the prior and model are compared with draws from a chain that
//! alternates a full sweep with a fresh draw of the data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::dist;
use crate::error::Result;
use crate::evaluation::{effective_sample_size, rank_sum_test};
use crate::gibbs::{outcome_given_scores, Sampler, SweepPlan};
use crate::psb;
use crate::state::{cumulative_products, ArmState};

#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub j: usize,
    pub l: usize,
    pub model: ModelConfig,
    /// Independent prior-and-data draws.
    pub marginal_draws: usize,
    /// Kept states of the successive-conditional chain.
    pub chain_draws: usize,
    /// Sweeps between kept chain states.
    pub thin: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub plan: SweepPlan,
}

impl GewekeConfig {
    /// The tiny model: n=20, q=3, p=2, two factors, three sticks.
    pub fn tiny(seed: u64) -> Self {
        let model = ModelConfig {
            j_max: 2,
            l_max: 3,
            sigma2_m: 1.0,
            sigma2_beta: 1.0,
            a_psi: 3.0,
            b_psi: 2.0,
            ..ModelConfig::default()
        };
        GewekeConfig {
            n: 20,
            q: 3,
            p: 2,
            j: 2,
            l: 3,
            model,
            marginal_draws: 4000,
            chain_draws: 2000,
            thin: 200,
            burn_in: 500,
            seed,
            plan: SweepPlan::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatisticResult {
    pub name: &'static str,
    pub marginal_mean: f64,
    pub chain_mean: f64,
    pub p_value: f64,
    /// Effective sample size of the chain draws.
    pub chain_ess: f64,
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub statistics: Vec<StatisticResult>,
}

impl GewekeReport {
    pub fn min_p(&self) -> f64 {
        self.statistics.iter().map(|s| s.p_value).fold(1.0, f64::min)
    }

    /// Every statistic passes at `alpha` after Bonferroni correction.
    pub fn passes(&self, alpha: f64) -> bool {
        self.min_p() > alpha / self.statistics.len() as f64
    }
}

pub const STATISTIC_NAMES: [&str; 12] = [
    "mu0_mean",
    "mu1_mean",
    "b0_11",
    "b1_12",
    "lambda0_sq",
    "lambda1_sq",
    "ln_psi0_1",
    "eta0_mean",
    "eta1_sq",
    "sate_1",
    "sate_mean",
    "score0_sq",
];

/// Draw an arm state from the prior, with labels and scores for every unit.
pub fn draw_arm_from_prior<R: Rng + ?Sized>(rng: &mut R, cfg: &ModelConfig, x_rows: &[Vec<f64>], q: usize) -> ArmState {
    let (n, p, j, l) = (x_rows.len(), x_rows[0].len(), cfg.j_max, cfg.l_max);
    let mut arm = ArmState::initial(rng, n, q, p, j, l);
    arm.mu = DVector::from_fn(q, |_, _| dist::normal(rng, cfg.mu_m, cfg.sigma2_m.sqrt()));
    arm.b = DMatrix::from_fn(q, p, |_, _| dist::normal(rng, cfg.mu_beta, cfg.sigma2_beta.sqrt()));
    arm.psi = DVector::from_fn(q, |_, _| 1.0 / dist::gamma(rng, cfg.a_psi, cfg.b_psi));
    arm.delta = DVector::from_fn(j, |h, _| dist::gamma(rng, if h == 0 { cfg.a1 } else { cfg.a2 }, 1.0));
    arm.iota = cumulative_products(&arm.delta);
    arm.theta = DMatrix::from_fn(q, j, |_, _| dist::gamma(rng, 0.5 * cfg.nu, 0.5 * cfg.nu));
    arm.lambda = DMatrix::from_fn(q, j, |r, h| dist::normal(rng, 0.0, (arm.theta[(r, h)] * arm.iota[h]).recip().sqrt()));
    arm.eta = DMatrix::from_fn(l, j, |_, _| dist::normal(rng, cfg.mu_eta, cfg.sigma2_eta.sqrt()));
    if !cfg.fixed_tau {
        arm.tau = DMatrix::from_fn(l, j, |_, _| dist::gamma(rng, cfg.gamma1, cfg.gamma2));
    }
    arm.alpha = (0..j)
        .map(|_| DMatrix::from_fn(l - 1, p + 1, |_, _| dist::normal(rng, cfg.mu_alpha, cfg.sigma2_alpha.sqrt())))
        .collect();
    for (i, x) in x_rows.iter().enumerate() {
        for h in 0..j {
            let eta: Vec<f64> = arm.eta.column(h).iter().copied().collect();
            let tau: Vec<f64> = arm.tau.column(h).iter().copied().collect();
            let (label, score) = psb::sample_scores_prior(rng, x, &arm.alpha[h], &eta, &tau);
            arm.labels[(i, h)] = label;
            arm.scores[(i, h)] = score;
        }
    }
    arm
}

/// Outcomes of both arms given each arm's stored scores.
fn draw_outcomes<R: Rng + ?Sized>(rng: &mut R, arms: &[ArmState; 2], x_rows: &[Vec<f64>]) -> [DMatrix<f64>; 2] {
    let q = arms[0].mu.len();
    [0, 1].map(|t| {
        let mut y = DMatrix::zeros(x_rows.len(), q);
        for (i, x) in x_rows.iter().enumerate() {
            let scores = arms[t].scores.row(i).transpose();
            y.row_mut(i).copy_from(&outcome_given_scores(rng, &arms[t], x, &scores, true).transpose());
        }
        y
    })
}

fn statistics(arms: &[ArmState; 2], sate: &DVector<f64>, factual: &[usize]) -> Vec<f64> {
    let score0_sq = factual.iter().map(|&i| arms[0].scores[(i, 0)].powi(2)).sum::<f64>() / factual.len().max(1) as f64;
    vec![
        arms[0].mu.mean(),
        arms[1].mu.mean(),
        arms[0].b[(0, 0)],
        arms[1].b[(0, 1)],
        arms[0].lambda.norm_squared(),
        arms[1].lambda.norm_squared(),
        arms[0].psi[0].ln(),
        arms[0].eta.mean(),
        arms[1].eta.norm_squared(),
        sate[0],
        sate.mean(),
        score0_sq,
    ]
}

/// Fixed covariates and assignment for the check.
pub fn design(cfg: &GewekeConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let x = DMatrix::from_fn(cfg.n, cfg.p, |_, _| dist::standard_normal(&mut rng));
    let t: Vec<u8> = (0..cfg.n).map(|i| (i % 2) as u8).collect();
    Dataset::new(
        (0..cfg.n).map(|i| format!("u{i}")).collect(),
        (0..cfg.q).map(|k| format!("y{}", k + 1)).collect(),
        (0..cfg.p).map(|k| format!("x{}", k + 1)).collect(),
        DMatrix::zeros(cfg.n, cfg.q),
        t,
        x,
    )
}

/// SATE from per-arm outcome matrices and assignment.
fn sate_of(y: &[DMatrix<f64>; 2]) -> DVector<f64> {
    let diff = &y[1] - &y[0];
    DVector::from_fn(diff.ncols(), |k, _| diff.column(k).mean())
}

pub fn run_geweke(cfg: &GewekeConfig) -> Result<GewekeReport> {
    let mut model = cfg.model.clone();
    model.j_max = cfg.j;
    model.l_max = cfg.l;
    let data = design(cfg)?;
    let mut sampler = Sampler::new(&data, &model, cfg.plan, cfg.seed)?;
    let x_rows = sampler.x_rows().to_vec();
    let t = sampler.treatment().to_vec();
    let factual0: Vec<usize> = (0..cfg.n).filter(|&i| t[i] == 0).collect();
    let observed = |y: &[DMatrix<f64>; 2]| DMatrix::from_fn(cfg.n, cfg.q, |i, k| y[t[i] as usize][(i, k)]);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let marginal: Vec<Vec<f64>> = (0..cfg.marginal_draws)
        .map(|_| {
            let arms = [0, 1].map(|_| draw_arm_from_prior(&mut rng, &model, &x_rows, cfg.q));
            let y = draw_outcomes(&mut rng, &arms, &x_rows);
            statistics(&arms, &sate_of(&y), &factual0)
        })
        .collect();

    let arms = [0, 1].map(|_| draw_arm_from_prior(&mut rng, &model, &x_rows, cfg.q));
    let y = draw_outcomes(&mut rng, &arms, &x_rows);
    sampler.arms = arms;
    sampler.set_outcomes(observed(&y));
    let mut chain = Vec::with_capacity(cfg.chain_draws);
    for s in 0..cfg.burn_in + cfg.chain_draws * cfg.thin {
        sampler.sweep()?;
        let y = draw_outcomes(&mut rng, &sampler.arms, &x_rows);
        sampler.set_outcomes(observed(&y));
        if s >= cfg.burn_in && (s - cfg.burn_in + 1) % cfg.thin == 0 {
            chain.push(statistics(&sampler.arms, &sampler.sate(), &factual0));
        }
    }

    let statistics = STATISTIC_NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let a: Vec<f64> = marginal.iter().map(|s| s[k]).collect();
            let b: Vec<f64> = chain.iter().map(|s| s[k]).collect();
            StatisticResult {
                name,
                marginal_mean: a.iter().sum::<f64>() / a.len() as f64,
                chain_mean: b.iter().sum::<f64>() / b.len() as f64,
                p_value: rank_sum_test(&a, &b),
                chain_ess: effective_sample_size(&b).map_or(0.0, |e| e.value),
            }
        })
        .collect();
    Ok(GewekeReport { statistics })
}
