//! The Gibbs sampler: one sweep updates each arm's regression, factor,
//! shrinkage and mixture blocks from that arm's observed units, then imputes
//! the arm's potential outcome for the units observed under the other arm.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, ScorePrior};
use crate::data::Dataset;
use crate::dist;
use crate::error::{CfmError, Result};
use crate::mgp;
use crate::psb::{self, AtomPrior};
use crate::state::{init_state_with, ArmState};

/// Update steps of a sweep, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Regression,
    FactualScores,
    Loadings,
    ResidualVariances,
    Shrinkage,
    Allocation,
    Atoms,
    Augmentation,
    Sticks,
    Imputation,
}

impl Block {
    pub const ORDER: [Block; 10] = [
        Block::Regression,
        Block::FactualScores,
        Block::Loadings,
        Block::ResidualVariances,
        Block::Shrinkage,
        Block::Allocation,
        Block::Atoms,
        Block::Augmentation,
        Block::Sticks,
        Block::Imputation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Regression => "regression",
            Block::FactualScores => "factual_scores",
            Block::Loadings => "loadings",
            Block::ResidualVariances => "residual_variances",
            Block::Shrinkage => "shrinkage",
            Block::Allocation => "allocation",
            Block::Atoms => "atoms",
            Block::Augmentation => "augmentation",
            Block::Sticks => "sticks",
            Block::Imputation => "imputation",
        }
    }

    fn index(self) -> usize {
        Block::ORDER.iter().position(|&b| b == self).unwrap()
    }
}

/// Which blocks run each sweep. The order is fixed; blocks can only be
/// switched off. Imputation always runs since the treatment effect draws
/// depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPlan {
    enabled: [bool; 10],
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan { enabled: [true; 10] }
    }
}

impl SweepPlan {
    /// Plan with the mixture blocks disabled, leaving the scores with the
    /// fixed atom they start from.
    pub fn without_mixture() -> Self {
        SweepPlan::default()
            .freeze(Block::Allocation)
            .freeze(Block::Atoms)
            .freeze(Block::Augmentation)
            .freeze(Block::Sticks)
    }

    pub fn freeze(mut self, block: Block) -> Self {
        if block != Block::Imputation {
            self.enabled[block.index()] = false;
        }
        self
    }

    pub fn is_enabled(&self, block: Block) -> bool {
        self.enabled[block.index()]
    }

    /// Enabled blocks in execution order.
    pub fn steps(&self) -> impl Iterator<Item = Block> + '_ {
        Block::ORDER.into_iter().filter(|b| self.is_enabled(*b))
    }
}

/// Regression, loading and variance parameters of one arm at one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSnapshot {
    pub mu: DVector<f64>,
    pub b: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub psi: DVector<f64>,
}

impl ArmSnapshot {
    fn of(arm: &ArmState) -> Self {
        ArmSnapshot { mu: arm.mu.clone(), b: arm.b.clone(), lambda: arm.lambda.clone(), psi: arm.psi.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    /// Index of the kept draw this snapshot belongs to.
    pub draw: usize,
    pub arms: [ArmSnapshot; 2],
}

/// Kept draws of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// One row per kept draw, one column per outcome.
    pub sate: DMatrix<f64>,
    pub snapshots: Vec<ParamSnapshot>,
    /// Imputed counterfactual outcomes per kept draw, when requested.
    pub counterfactuals: Vec<DMatrix<f64>>,
    pub seed: u64,
    pub config: ModelConfig,
    pub outcome_names: Vec<String>,
}

impl ChainOutput {
    pub fn kept(&self) -> usize {
        self.sate.nrows()
    }
}

/// Conjugate Gaussian draw of one outcome's `(mu_j, beta_j)`.
///
/// `gram` and `cross` are `X'X` and `X'r` for the design with a leading
/// intercept column; `prior_precision` and `prior_canonical` describe the
/// independent normal prior.
pub fn draw_coefficients<R: Rng + ?Sized>(
    rng: &mut R,
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    psi: f64,
    prior_precision: &DVector<f64>,
    prior_canonical: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut precision = gram / psi;
    for k in 0..precision.nrows() {
        precision[(k, k)] += prior_precision[k];
    }
    let canonical = prior_canonical + cross / psi;
    dist::mvn_from_precision(rng, precision, &canonical, "regression")
}

/// Joint draw of one unit's factor scores given its adjusted outcome
/// `resid = y - mu - B x` and the atoms of its current clusters.
///
/// `info` is `Lambda' Psi^{-1} Lambda` and `proj` is `Lambda' Psi^{-1}`.
pub fn draw_unit_scores<R: Rng + ?Sized>(
    rng: &mut R,
    info: &DMatrix<f64>,
    proj: &DMatrix<f64>,
    resid: &DVector<f64>,
    eta: &[f64],
    tau: &[f64],
) -> Result<DVector<f64>> {
    let mut precision = info.clone();
    let mut canonical = proj * resid;
    for h in 0..eta.len() {
        precision[(h, h)] += tau[h];
        canonical[h] += tau[h] * eta[h];
    }
    dist::mvn_from_precision(rng, precision, &canonical, "factor scores")
}

/// Potential outcome of a unit under an arm given its scores:
/// `mu + B x + Lambda l`, plus `N(0, psi)` noise when `noise` is set.
pub fn outcome_given_scores<R: Rng + ?Sized>(
    rng: &mut R,
    arm: &ArmState,
    x: &[f64],
    scores: &DVector<f64>,
    noise: bool,
) -> DVector<f64> {
    let xv = DVector::from_column_slice(x);
    let mut y = &arm.mu + &arm.b * xv + &arm.lambda * scores;
    if noise {
        for j in 0..y.len() {
            y[j] += dist::normal(rng, 0.0, arm.psi[j].sqrt());
        }
    }
    y
}

/// Predictive draw of a unit's potential outcome under `arm`: labels and
/// scores from the mixture prior at `x`, then the outcome given the scores.
pub fn impute_unit<R: Rng + ?Sized>(
    rng: &mut R,
    arm: &ArmState,
    x: &[f64],
    noise: bool,
) -> (Vec<usize>, DVector<f64>, DVector<f64>) {
    let j = arm.n_factors();
    let mut labels = Vec::with_capacity(j);
    let mut scores = DVector::zeros(j);
    for h in 0..j {
        let eta: Vec<f64> = arm.eta.column(h).iter().copied().collect();
        let tau: Vec<f64> = arm.tau.column(h).iter().copied().collect();
        let (s, l) = psb::sample_scores_prior(rng, x, &arm.alpha[h], &eta, &tau);
        labels.push(s);
        scores[h] = l;
    }
    let y = outcome_given_scores(rng, arm, x, &scores, noise);
    (labels, scores, y)
}

/// A running chain. Owns its random stream, so the sequence of draws is a
/// function of the seed, configuration and data alone.
pub struct Sampler {
    cfg: ModelConfig,
    plan: SweepPlan,
    treatment: Vec<u8>,
    y: DMatrix<f64>,
    x_rows: Vec<Vec<f64>>,
    units: [Vec<usize>; 2],
    others: [Vec<usize>; 2],
    design: [DMatrix<f64>; 2],
    gram: [DMatrix<f64>; 2],
    prior_precision: DVector<f64>,
    prior_canonical: DVector<f64>,
    pub arms: [ArmState; 2],
    /// Row `i` is the latest draw of `Y_i(1 - T_i)`.
    pub counterfactual: DMatrix<f64>,
    /// Latent probit draws handed from the augmentation block to the stick update.
    augmentation: [Option<psb::Augmentation>; 2],
    rng: ChaCha8Rng,
    sweep: usize,
}

impl Sampler {
    /// Validate and set up a chain; the initial state is drawn from the
    /// same stream as the sweeps.
    pub fn new(data: &Dataset, cfg: &ModelConfig, plan: SweepPlan, seed: u64) -> Result<Self> {
        cfg.validate_structure()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arms = init_state_with(&mut rng, data, cfg.j_max, cfg.l_max);
        Ok(Self::with_state(data, cfg, plan, rng, arms))
    }

    pub(crate) fn with_state(
        data: &Dataset,
        cfg: &ModelConfig,
        plan: SweepPlan,
        rng: ChaCha8Rng,
        arms: [ArmState; 2],
    ) -> Self {
        let (n, p) = (data.n(), data.p());
        let x_rows: Vec<Vec<f64>> = (0..n).map(|i| data.x.row(i).iter().copied().collect()).collect();
        let units = [data.arm_units(0), data.arm_units(1)];
        let others = [units[1].clone(), units[0].clone()];
        let design = [0, 1].map(|t| {
            DMatrix::from_fn(units[t].len(), p + 1, |k, c| if c == 0 { 1.0 } else { x_rows[units[t][k]][c - 1] })
        });
        let gram = [design[0].tr_mul(&design[0]), design[1].tr_mul(&design[1])];
        let prior_precision =
            DVector::from_fn(p + 1, |k, _| if k == 0 { 1.0 / cfg.sigma2_m } else { 1.0 / cfg.sigma2_beta });
        let prior_canonical =
            DVector::from_fn(p + 1, |k, _| if k == 0 { cfg.mu_m / cfg.sigma2_m } else { cfg.mu_beta / cfg.sigma2_beta });
        Sampler {
            cfg: cfg.clone(),
            plan,
            treatment: data.t.clone(),
            y: data.y.clone(),
            x_rows,
            units,
            others,
            design,
            gram,
            prior_precision,
            prior_canonical,
            arms,
            counterfactual: DMatrix::zeros(n, data.q()),
            augmentation: [None, None],
            rng,
            sweep: 0,
        }
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweep
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn x_rows(&self) -> &[Vec<f64>] {
        &self.x_rows
    }

    /// Replace the observed outcomes, keeping covariates and assignment.
    pub fn set_outcomes(&mut self, y: DMatrix<f64>) {
        assert_eq!(y.shape(), self.y.shape());
        self.y = y;
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Run one full sweep over both arms.
    pub fn sweep(&mut self) -> Result<()> {
        let plan = self.plan;
        for t in 0..2 {
            for block in plan.steps() {
                let sweep = self.sweep;
                self.run_block(t, block).map_err(|e| match e {
                    CfmError::NonFinite { .. } => e,
                    other => CfmError::InBlock { sweep, block: block.name(), source: Box::new(other) },
                })?;
                let ok = self.arms[t].is_finite()
                    && (block != Block::Imputation || self.counterfactual.iter().all(|v| v.is_finite()));
                if !ok {
                    return Err(CfmError::NonFinite { sweep: self.sweep, block: block.name() });
                }
            }
        }
        self.sweep += 1;
        Ok(())
    }

    /// Per-outcome mean over units of `Y_i(1) - Y_i(0)` using observed
    /// factual outcomes and the current imputations.
    pub fn sate(&self) -> DVector<f64> {
        let (n, q) = self.y.shape();
        let mut acc = DVector::zeros(q);
        for i in 0..n {
            for j in 0..q {
                let (y, m) = (self.y[(i, j)], self.counterfactual[(i, j)]);
                acc[j] += if self.treatment[i] == 1 { y - m } else { m - y };
            }
        }
        acc / n as f64
    }

    fn run_block(&mut self, t: usize, block: Block) -> Result<()> {
        match block {
            Block::Regression => self.update_regression(t),
            Block::FactualScores => self.update_factual_scores(t),
            Block::Loadings => self.update_loadings(t),
            Block::ResidualVariances => {
                let resid = self.adjusted(t) - self.factual_scores(t) * self.arms[t].lambda.transpose();
                mgp::draw_residual_variances(&mut self.rng, &resid, self.cfg.a_psi, self.cfg.b_psi, &mut self.arms[t].psi);
                Ok(())
            }
            Block::Shrinkage => {
                let arm = &mut self.arms[t];
                mgp::draw_local_precisions(&mut self.rng, &arm.lambda, &arm.iota, self.cfg.nu, &mut arm.theta);
                mgp::draw_global_increments(
                    &mut self.rng,
                    &arm.lambda,
                    &arm.theta,
                    self.cfg.a1,
                    self.cfg.a2,
                    &mut arm.delta,
                    &mut arm.iota,
                );
                Ok(())
            }
            Block::Allocation => psb::allocate_clusters(&mut self.rng, &mut self.arms[t], &self.units[t], &self.x_rows),
            Block::Atoms => {
                let prior = AtomPrior {
                    mu_eta: self.cfg.mu_eta,
                    sigma2_eta: self.cfg.sigma2_eta,
                    gamma1: self.cfg.gamma1,
                    gamma2: self.cfg.gamma2,
                    fixed_tau: self.cfg.fixed_tau,
                };
                psb::update_atoms(&mut self.rng, &mut self.arms[t], &self.units[t], &prior);
                Ok(())
            }
            Block::Augmentation => {
                let aug = psb::augment_probit(&mut self.rng, &self.arms[t], &self.units[t], &self.x_rows);
                if !aug.z.iter().flatten().flatten().all(|v| v.is_finite()) {
                    return Err(CfmError::NonFinite { sweep: self.sweep, block: block.name() });
                }
                self.augmentation[t] = Some(aug);
                Ok(())
            }
            Block::Sticks => match self.augmentation[t].take() {
                Some(aug) => psb::update_stick_coefficients(
                    &mut self.rng,
                    &mut self.arms[t],
                    &aug,
                    &self.x_rows,
                    self.cfg.mu_alpha,
                    self.cfg.sigma2_alpha,
                ),
                None => Ok(()),
            },
            Block::Imputation => {
                self.impute_counterfactuals(t);
                Ok(())
            }
        }
    }

    fn factual_scores(&self, t: usize) -> DMatrix<f64> {
        self.arms[t].scores.select_rows(&self.units[t])
    }

    /// Outcomes of arm `t`'s units minus intercept and covariate effects.
    fn adjusted(&self, t: usize) -> DMatrix<f64> {
        let arm = &self.arms[t];
        let mut fitted = &self.design[t].columns(1, arm.b.ncols()) * arm.b.transpose();
        for mut row in fitted.row_iter_mut() {
            row += arm.mu.transpose();
        }
        self.y.select_rows(&self.units[t]) - fitted
    }

    fn update_regression(&mut self, t: usize) -> Result<()> {
        let arm = &self.arms[t];
        let target = self.y.select_rows(&self.units[t]) - self.factual_scores(t) * arm.lambda.transpose();
        let cross = self.design[t].tr_mul(&target);
        let p = arm.b.ncols();
        for j in 0..target.ncols() {
            let coef = draw_coefficients(
                &mut self.rng,
                &self.gram[t],
                &cross.column(j).into_owned(),
                self.arms[t].psi[j],
                &self.prior_precision,
                &self.prior_canonical,
            )?;
            let arm = &mut self.arms[t];
            arm.mu[j] = coef[0];
            for k in 0..p {
                arm.b[(j, k)] = coef[k + 1];
            }
        }
        Ok(())
    }

    fn update_factual_scores(&mut self, t: usize) -> Result<()> {
        let adjusted = self.adjusted(t);
        let arm = &mut self.arms[t];
        let mut proj = arm.lambda.transpose();
        for (j, mut col) in proj.column_iter_mut().enumerate() {
            col /= arm.psi[j];
        }
        let info = &proj * &arm.lambda;
        let j_max = arm.n_factors();
        let mut eta = vec![0.0; j_max];
        let mut tau = vec![0.0; j_max];
        for (k, &i) in self.units[t].iter().enumerate() {
            for h in 0..j_max {
                let s = arm.labels[(i, h)];
                eta[h] = arm.eta[(s, h)];
                tau[h] = arm.tau[(s, h)];
            }
            let resid = adjusted.row(k).transpose();
            let draw = draw_unit_scores(&mut self.rng, &info, &proj, &resid, &eta, &tau)?;
            arm.scores.row_mut(i).copy_from(&draw.transpose());
        }
        Ok(())
    }

    fn update_loadings(&mut self, t: usize) -> Result<()> {
        let targets = self.adjusted(t);
        let scores = self.factual_scores(t);
        let arm = &mut self.arms[t];
        mgp::draw_loadings(&mut self.rng, &scores, &targets, &arm.psi, &arm.theta, &arm.iota, &mut arm.lambda)
    }

    /// Draw `Y_i(t)` for every unit observed under the other arm.
    fn impute_counterfactuals(&mut self, t: usize) {
        let noise = self.cfg.impute_noise;
        for &i in &self.others[t] {
            let (labels, scores, y) = impute_unit(&mut self.rng, &self.arms[t], &self.x_rows[i], noise);
            let arm = &mut self.arms[t];
            for (h, s) in labels.into_iter().enumerate() {
                arm.labels[(i, h)] = s;
            }
            arm.scores.row_mut(i).copy_from(&scores.transpose());
            self.counterfactual.row_mut(i).copy_from(&y.transpose());
        }
    }
}

/// Run a chain with the configured score prior.
pub fn run_chain(data: &Dataset, cfg: &ModelConfig, seed: u64) -> Result<ChainOutput> {
    cfg.validate()?;
    match cfg.prior {
        ScorePrior::Ddp => run_chain_with_plan(data, cfg, SweepPlan::default(), seed),
        ScorePrior::Standard => crate::baseline::run_chain_standard(data, cfg, seed),
    }
}

/// Run a chain with an explicit sweep plan.
pub fn run_chain_with_plan(data: &Dataset, cfg: &ModelConfig, plan: SweepPlan, seed: u64) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(data, cfg, plan, seed)?;
    let kept = cfg.kept_draws();
    let q = data.q();
    let mut sate = DMatrix::zeros(kept, q);
    let mut snapshots = Vec::new();
    let mut counterfactuals = Vec::new();
    let mut draw = 0;
    for it in 0..cfg.n_iter {
        sampler.sweep()?;
        if it < cfg.burn_in || (it - cfg.burn_in + 1) % cfg.thin != 0 || draw >= kept {
            continue;
        }
        sate.row_mut(draw).copy_from(&sampler.sate().transpose());
        if cfg.snapshot_every > 0 && draw % cfg.snapshot_every == 0 {
            snapshots.push(ParamSnapshot {
                draw,
                arms: [ArmSnapshot::of(&sampler.arms[0]), ArmSnapshot::of(&sampler.arms[1])],
            });
        }
        if cfg.store_counterfactuals {
            counterfactuals.push(sampler.counterfactual.clone());
        }
        draw += 1;
    }
    let mut config = cfg.clone();
    config.rng_seed = seed;
    Ok(ChainOutput { sate, snapshots, counterfactuals, seed, config, outcome_names: data.outcome_names.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ArmState;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let m = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / m;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, var)
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Small dataset with noise outcomes and a balanced random assignment.
    fn noise_data(n: usize, q: usize, p: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let y = DMatrix::from_fn(n, q, |_, _| dist::standard_normal(&mut r));
        let x = DMatrix::from_fn(n, p, |_, _| dist::standard_normal(&mut r));
        let t: Vec<u8> = (0..n).map(|_| r.random_bool(0.5) as u8).collect();
        Dataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            (1..=q).map(|j| format!("y_{j}")).collect(),
            (1..=p).map(|k| format!("x_{k}")).collect(),
            y,
            t,
            x,
        )
        .unwrap()
    }

    #[test]
    fn plan_order_is_fixed() {
        let steps: Vec<_> = SweepPlan::default().steps().collect();
        assert_eq!(steps, Block::ORDER.to_vec());
        let reduced: Vec<_> = SweepPlan::without_mixture().steps().map(Block::name).collect();
        assert_eq!(
            reduced,
            ["regression", "factual_scores", "loadings", "residual_variances", "shrinkage", "imputation"]
        );
        assert!(SweepPlan::default().freeze(Block::Imputation).is_enabled(Block::Imputation));
    }

    #[test]
    fn regression_without_units_is_prior() {
        let gram = DMatrix::zeros(2, 2);
        let cross = DVector::zeros(2);
        let prec = DVector::from_vec(vec![0.25, 0.25]);
        let canon = DVector::from_vec(vec![0.25, 0.0]);
        let mut r = rng(1);
        let m = 50_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| draw_coefficients(&mut r, &gram, &cross, 1.0, &prec, &canon).unwrap()[0])
            .collect();
        let (mean, var) = moments(&draws);
        assert!((mean - 1.0).abs() < 3.0 * 2.0 / (m as f64).sqrt());
        assert!((var - 4.0).abs() < 3.0 * 4.0 * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn regression_intercept_posterior() {
        // 200 units, unit column, residual mean 3, psi = 1, vague prior:
        // posterior mean ~ 3, variance ~ 1/200.
        let n = 200.0;
        let gram = DMatrix::from_element(1, 1, n);
        let cross = DVector::from_element(1, 3.0 * n);
        let prec = DVector::from_element(1, 1e-6);
        let canon = DVector::zeros(1);
        let mut r = rng(2);
        let m = 100_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| draw_coefficients(&mut r, &gram, &cross, 1.0, &prec, &canon).unwrap()[0])
            .collect();
        let (mean, var) = moments(&draws);
        let post_var = 1.0 / (n + 1e-6);
        assert!((mean - 3.0 * n * post_var).abs() < 3.0 * post_var.sqrt() / (m as f64).sqrt());
        assert!((var - post_var).abs() < 3.0 * post_var * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn collinear_covariates_stay_proper() {
        let design = DMatrix::from_fn(50, 3, |i, c| if c == 0 { 1.0 } else { (i as f64).sin() });
        let gram = design.tr_mul(&design);
        let cross = design.tr_mul(&DVector::from_element(50, 1.0));
        let prec = DVector::from_element(3, 1.0);
        let draw = draw_coefficients(&mut rng(3), &gram, &cross, 1.0, &prec, &DVector::zeros(3)).unwrap();
        assert!(draw.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scalar_score_posterior() {
        // q = 1, J = 1, lambda = 1, psi = 1, prior N(0, 1), residual 2: N(1, 1/2).
        let info = DMatrix::from_element(1, 1, 1.0);
        let proj = DMatrix::from_element(1, 1, 1.0);
        let resid = DVector::from_element(1, 2.0);
        let mut r = rng(4);
        let m = 100_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| draw_unit_scores(&mut r, &info, &proj, &resid, &[0.0], &[1.0]).unwrap()[0])
            .collect();
        let (mean, var) = moments(&draws);
        assert!((mean - 1.0).abs() < 3.0 * 0.5f64.sqrt() / (m as f64).sqrt());
        assert!((var - 0.5).abs() < 3.0 * 0.5 * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn scores_without_loadings_follow_atom() {
        let info = DMatrix::zeros(2, 2);
        let proj = DMatrix::zeros(2, 3);
        let resid = DVector::from_element(3, 5.0);
        let mut r = rng(5);
        let m = 50_000;
        let draws: Vec<f64> = (0..m)
            .map(|_| draw_unit_scores(&mut r, &info, &proj, &resid, &[1.5, -2.0], &[4.0, 1.0]).unwrap()[0])
            .collect();
        let (mean, var) = moments(&draws);
        assert!((mean - 1.5).abs() < 3.0 * 0.5 / (m as f64).sqrt());
        assert!((var - 0.25).abs() < 3.0 * 0.25 * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn diffuse_scores_project_onto_loadings() {
        // Orthonormal columns, Psi = I: posterior mean Lambda' r.
        let s = 0.5f64.sqrt();
        let lambda = DMatrix::from_row_slice(3, 2, &[s, 0.0, s, 0.0, 0.0, 1.0]);
        let proj = lambda.transpose();
        let info = &proj * &lambda;
        let resid = DVector::from_vec(vec![1.0, 3.0, -2.0]);
        let expect = &proj * &resid;
        let mut r = rng(6);
        let m = 20_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..m {
            acc += draw_unit_scores(&mut r, &info, &proj, &resid, &[0.0, 0.0], &[1e-6, 1e-6]).unwrap();
        }
        acc /= m as f64;
        assert!((acc - expect).amax() < 0.03);
    }

    fn toy_arm(q: usize, p: usize, j: usize, l: usize) -> ArmState {
        ArmState::initial(&mut rng(0), 1, q, p, j, l)
    }

    #[test]
    fn degenerate_model_imputes_constant() {
        let mut arm = toy_arm(2, 1, 1, 2);
        arm.lambda.fill(0.0);
        arm.mu.fill(3.5);
        let mut r = rng(7);
        for _ in 0..100 {
            let (_, _, y) = impute_unit(&mut r, &arm, &[0.3], false);
            assert!(y.iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn location_shift_is_recovered() {
        let mut a0 = toy_arm(2, 1, 1, 2);
        a0.lambda.fill(0.0);
        let mut a1 = a0.clone();
        a1.mu.fill(1.25);
        let mut r = rng(8);
        let m = 20_000;
        let mut acc = 0.0;
        for _ in 0..m {
            let y1 = impute_unit(&mut r, &a1, &[0.0], true).2;
            let y0 = impute_unit(&mut r, &a0, &[0.0], true).2;
            acc += y1[0] - y0[0];
        }
        let sd = 2.0f64.sqrt();
        assert!((acc / m as f64 - 1.25).abs() < 3.0 * sd / (m as f64).sqrt());
    }

    #[test]
    fn imputation_matches_mixture_mean() {
        // Two clusters per factor: E[Y | x] = mu + B x + Lambda sum_r pi_r(x) eta_r.
        let mut arm = toy_arm(3, 1, 2, 2);
        arm.mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        arm.b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, -0.5]);
        arm.lambda = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -1.0, 0.3]);
        arm.psi = DVector::from_vec(vec![0.2, 0.5, 1.0]);
        arm.eta = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 2.0, -0.5]);
        arm.tau = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0]);
        arm.alpha = vec![DMatrix::from_row_slice(1, 2, &[0.2, 0.7]), DMatrix::from_row_slice(1, 2, &[-0.4, 0.3])];
        let x = [0.8];
        let mut mean_scores = DVector::zeros(2);
        let mut var_scores = DVector::zeros(2);
        for h in 0..2 {
            let w = psb::stick_weights(&x, &arm.alpha[h]);
            let m: f64 = (0..2).map(|r| w[r] * arm.eta[(r, h)]).sum();
            let s2: f64 = (0..2).map(|r| w[r] * (arm.eta[(r, h)].powi(2) + 1.0 / arm.tau[(r, h)])).sum();
            mean_scores[h] = m;
            var_scores[h] = s2 - m * m;
        }
        let expect = &arm.mu + &arm.b * DVector::from_column_slice(&x) + &arm.lambda * &mean_scores;
        let mut r = rng(9);
        let m = 10_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..m {
            acc += impute_unit(&mut r, &arm, &x, true).2;
        }
        acc /= m as f64;
        for j in 0..3 {
            let var: f64 = (0..2).map(|h| arm.lambda[(j, h)].powi(2) * var_scores[h]).sum::<f64>() + arm.psi[j];
            assert!((acc[j] - expect[j]).abs() < 3.0 * (var / m as f64).sqrt(), "outcome {j}");
        }
    }

    #[test]
    fn rotation_leaves_outcome_unchanged() {
        let mut arm = toy_arm(4, 2, 3, 2);
        arm.lambda = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let scores = DVector::from_vec(vec![0.4, -1.2, 2.0]);
        let angle: f64 = 0.83;
        let (c, s) = (angle.cos(), angle.sin());
        let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
            * DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, s, c, 0.0, -c, s]);
        let mut rotated = arm.clone();
        rotated.lambda = &arm.lambda * &rot;
        let rotated_scores = rot.transpose() * &scores;
        let a = outcome_given_scores(&mut rng(10), &arm, &[0.1, -0.2], &scores, true);
        let b = outcome_given_scores(&mut rng(10), &rotated, &[0.1, -0.2], &rotated_scores, true);
        assert!((a - b).amax() < 1e-12);
    }

    fn quick_cfg() -> ModelConfig {
        ModelConfig { n_iter: 10, burn_in: 5, j_max: 2, l_max: 3, ..Default::default() }
    }

    #[test]
    fn kept_draw_bookkeeping() {
        let data = noise_data(30, 3, 2, 1);
        let out = run_chain(&data, &quick_cfg(), 4).unwrap();
        assert_eq!(out.kept(), 5);
        assert_eq!(out.sate.ncols(), 3);
        assert_eq!(out.snapshots.len(), 5);
        assert_eq!(out.config.rng_seed, 4);
        let thin = ModelConfig { n_iter: 11, burn_in: 2, thin: 4, snapshot_every: 0, ..quick_cfg() };
        let out = run_chain(&data, &thin, 4).unwrap();
        assert_eq!(out.kept(), 2);
        assert!(out.snapshots.is_empty());
    }

    #[test]
    fn same_seed_same_chain() {
        let data = noise_data(40, 3, 2, 2);
        let cfg = ModelConfig { store_counterfactuals: true, ..quick_cfg() };
        let a = run_chain(&data, &cfg, 11).unwrap();
        let b = run_chain(&data, &cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&data, &cfg, 12).unwrap();
        assert_ne!(a.sate, c.sate);
    }

    #[test]
    fn counterfactuals_only_fill_other_arm_rows() {
        let data = noise_data(25, 2, 1, 3);
        let cfg = ModelConfig { store_counterfactuals: true, ..quick_cfg() };
        let out = run_chain(&data, &cfg, 1).unwrap();
        let last = out.counterfactuals.last().unwrap();
        assert!(last.iter().all(|v| v.is_finite() && *v != 0.0));
        // Re-deriving the last SATE draw from the stored imputations.
        let m = out.kept() - 1;
        for j in 0..2 {
            let s: f64 = (0..25)
                .map(|i| if data.t[i] == 1 { data.y[(i, j)] - last[(i, j)] } else { last[(i, j)] - data.y[(i, j)] })
                .sum::<f64>()
                / 25.0;
            assert!((s - out.sate[(m, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn overflowing_data_aborts_numerically() {
        let mut data = noise_data(20, 2, 1, 4);
        data.y.fill(1e200);
        let err = run_chain(&data, &quick_cfg(), 1).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        match err {
            CfmError::NonFinite { sweep, block } => {
                assert_eq!(sweep, 0);
                assert!(Block::ORDER.iter().any(|b| b.name() == block));
            }
            CfmError::InBlock { sweep, .. } => assert_eq!(sweep, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn null_data_has_no_effect() {
        let data = noise_data(200, 3, 2, 5);
        let cfg = ModelConfig { n_iter: 800, burn_in: 400, j_max: 2, l_max: 4, ..Default::default() };
        let out = run_chain(&data, &cfg, 21).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = out.sate.column(j).iter().copied().collect();
            let (mean, var) = moments(&col);
            assert!(mean.abs() < 3.0 * var.sqrt(), "outcome {j}: {mean} sd {}", var.sqrt());
        }
    }
}
