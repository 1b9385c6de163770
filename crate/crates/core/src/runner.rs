//! Command-line pipelines: simulate, match, fit, evaluate and replicate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{ModelConfig, ScorePrior};
use crate::data::{Dataset, Schema};
use crate::error::{CfmError, Result};
use crate::estimands::{summarize_sate, EffectSummary};
use crate::evaluation::{align_loadings, aligned_posterior_mean, ReplicateMetrics};
use crate::gibbs::run_chain;
use crate::matching::{balance, fit_propensity, match_1to1};
use crate::output::{read_lambda_draws, read_sate_draws, sate_table, snapshot_tables, OutputDir, RunManifest};
use crate::simulation::{generate, ScenarioSpec, TruthRecord};
use crate::study::{aggregate, run_study, StudyPlan};

#[derive(Debug, Parser)]
#[command(name = "cfm", version, about = "Causal factor model with covariate-dependent score mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario dataset with its truth record.
    Simulate(SimulateArgs),
    /// Propensity-score 1:1 matching of a dataset.
    Match(MatchArgs),
    /// Run the sampler on a dataset and summarise the effect draws.
    Fit(FitArgs),
    /// Score fits against a truth record.
    Evaluate(EvaluateArgs),
    /// Repeat simulate, fit and evaluate over many seeds.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub scenario: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Column mapping JSON; by default `id`, `t`, `y_*` and `x_*` columns.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Largest allowed propensity distance within a pair.
    #[arg(long)]
    pub caliper: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Model configuration JSON; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<ScorePrior>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-draw parameter tables under `params/`.
    #[arg(long)]
    pub save_params: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Truth record written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Output directory of a `fit` run; repeat for several fits.
    #[arg(long = "fit", required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub scenario: u8,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fit only this prior; both are fitted by default.
    #[arg(long)]
    pub prior: Option<ScorePrior>,
    #[arg(long, env = "CFM_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub paper_scale: bool,
    /// Credible level for coverage.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl clap::ValueEnum for ScorePrior {
    fn value_variants<'a>() -> &'a [Self] {
        &[ScorePrior::Ddp, ScorePrior::Standard]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Match(a) => cmd_match(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Replicate(a) => cmd_replicate(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    path.map_or_else(|| Ok(ModelConfig::default()), ModelConfig::from_json_file)
}

fn load_data(args: &DataArgs, manifest: &mut RunManifest) -> Result<Dataset> {
    let schema = match &args.schema {
        Some(p) => {
            manifest.add_input(p)?;
            Schema::from_json_file(p)?
        }
        None => Schema::default(),
    };
    let data = Dataset::load_csv(&args.data, &schema)?;
    manifest.add_input(&args.data)?;
    Ok(data)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CfmError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CfmError::json(path, e))
}

fn scenario_spec(id: u8, seed: u64, paper_scale: bool) -> Result<ScenarioSpec> {
    if paper_scale {
        ScenarioSpec::paper_scale(id, seed)
    } else {
        ScenarioSpec::desk(id, seed)
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut out = OutputDir::create(&a.out)?;
    let sim = generate(&scenario_spec(a.scenario, a.seed, a.paper_scale)?)?;
    let path = out.path("data.csv")?;
    sim.data.save_csv(&path)?;
    out.write_json("truth.json", &sim.record())?;
    out.finish(RunManifest::new("simulate", None, Some(a.seed)), started)
}

#[derive(serde::Serialize)]
struct MatchReport {
    #[serde(flatten)]
    balance: crate::matching::Balance,
    pairs: usize,
    dropped: usize,
    propensity_iterations: usize,
    propensity_converged: bool,
    propensity_ridge: bool,
}

pub fn cmd_match(a: &MatchArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("match", None, None);
    let data = load_data(&a.input, &mut manifest)?;
    let mut out = OutputDir::create(&a.out)?;
    let fit = fit_propensity(&data)?;
    let result = match_1to1(&fit.probabilities, &data.t, a.caliper)?;
    let matched = data.subset(&result.rows())?;
    let path = out.path("matched.csv")?;
    matched.save_csv(&path)?;
    let pairs: Vec<Vec<String>> = result
        .pairs
        .iter()
        .map(|p| vec![data.unit_ids[p.treated].clone(), data.unit_ids[p.control].clone(), p.distance.to_string()])
        .collect();
    out.write_csv("pairs.csv", &["treated".into(), "control".into(), "distance".into()], &pairs)?;
    let report = MatchReport {
        balance: balance(&data, &result),
        pairs: result.pairs.len(),
        dropped: result.dropped.len(),
        propensity_iterations: fit.iterations,
        propensity_converged: fit.converged,
        propensity_ridge: fit.ridge,
    };
    out.write_json("balance.json", &report)?;
    out.finish(manifest, started)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct FitRecord {
    prior: ScorePrior,
    seed: u64,
    config: ModelConfig,
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("fit", a.config.as_deref(), Some(a.seed));
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    if let Some(prior) = a.prior {
        cfg.prior = prior;
    }
    let data = load_data(&a.input, &mut manifest)?;
    let mut out = OutputDir::create(&a.out)?;
    let chain = run_chain(&data, &cfg, a.seed)?;
    let (header, rows) = sate_table(&chain.sate);
    out.write_csv("sate_draws.csv", &header, &rows)?;
    out.write_json("summary.json", &summarize_sate(&chain.sate, cfg.credible_level, Some(&chain.outcome_names))?)?;
    out.write_json("fit.json", &FitRecord { prior: cfg.prior, seed: a.seed, config: chain.config.clone() })?;
    if a.save_params {
        for (name, header, rows) in snapshot_tables(&chain.snapshots) {
            out.write_csv(&format!("params/{name}.csv"), &header, &rows)?;
        }
    }
    out.finish(manifest, started)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("evaluate", None, None);
    let truth: TruthRecord = read_json(&a.truth)?;
    manifest.add_input(&a.truth)?;
    let mut metric_rows = Vec::new();
    let mut loading_rows = Vec::new();
    for dir in &a.fits {
        let record_path = dir.join("fit.json");
        let record: FitRecord = read_json(&record_path)?;
        let summary_path = dir.join("summary.json");
        let summary: EffectSummary = read_json(&summary_path)?;
        let draws_path = dir.join("sate_draws.csv");
        let draws = read_sate_draws(&draws_path)?;
        for p in [&record_path, &summary_path, &draws_path] {
            manifest.add_input(p)?;
        }
        if draws.nrows() != summary.m || draws.ncols() != truth.sate.len() {
            return Err(CfmError::Validation(format!("{}: draws disagree with summary or truth", dir.display())));
        }
        let method = record.prior.name();
        let metrics = ReplicateMetrics::from_summary(method, &summary, &truth.sate)?;
        for (k, o) in summary.outcomes.iter().enumerate() {
            metric_rows.push(vec![
                method.to_string(),
                (k + 1).to_string(),
                truth.sate[k].to_string(),
                o.mean.to_string(),
                o.lo.to_string(),
                o.hi.to_string(),
                metrics.bias[k].to_string(),
                (metrics.bias[k] / truth.residual_sd[k]).to_string(),
                metrics.sq_error[k].to_string(),
                (metrics.covered[k] as u8).to_string(),
            ]);
        }
        let lambda_path = dir.join("params").join("lambda.csv");
        if lambda_path.exists() {
            manifest.add_input(&lambda_path)?;
            for (t, draws) in read_lambda_draws(&lambda_path)?.iter().enumerate() {
                let reference = &truth.arms[t].lambda;
                let target = nalgebra::DMatrix::from_fn(reference.len(), reference[0].len(), |i, h| reference[i][h]);
                if draws.is_empty() || draws[0].ncols() < target.ncols() {
                    continue;
                }
                let aligned = align_loadings(&aligned_posterior_mean(draws)?, &target)?;
                for (h, c) in aligned.correlations.iter().enumerate() {
                    loading_rows.push(vec![method.to_string(), t.to_string(), (h + 1).to_string(), c.to_string()]);
                }
            }
        }
    }
    let mut out = OutputDir::create(&a.out)?;
    let header: Vec<String> = ["method", "outcome", "truth", "mean", "lo", "hi", "bias", "scaled_bias", "sq_error", "covered"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    out.write_csv("metrics.csv", &header, &metric_rows)?;
    if !loading_rows.is_empty() {
        let header: Vec<String> = ["method", "arm", "factor", "abs_corr"].iter().map(|s| s.to_string()).collect();
        out.write_csv("loadings.csv", &header, &loading_rows)?;
    }
    out.finish(manifest, started)
}

pub fn cmd_replicate(a: &ReplicateArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("replicate", a.config.as_deref(), Some(a.seed));
    let model = match &a.config {
        Some(p) => {
            let cfg = ModelConfig::from_json_file(p)?;
            manifest.add_input(p)?;
            cfg
        }
        None => ModelConfig { j_max: scenario_spec(a.scenario, a.seed, a.paper_scale)?.j, ..ModelConfig::default() },
    };
    if a.threads == Some(0) {
        return Err(CfmError::Config("--threads must be at least 1".into()));
    }
    let plan = StudyPlan {
        scenario: a.scenario,
        paper_scale: a.paper_scale,
        reps: a.reps,
        seed: a.seed,
        model,
        priors: a.prior.map_or_else(|| vec![ScorePrior::Ddp, ScorePrior::Standard], |p| vec![p]),
        level: a.level,
        threads: a.threads,
    };
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CfmError::Config(format!("credible level {} outside (0, 1)", a.level)));
    }
    let mut out = OutputDir::create(&a.out)?;
    let results = run_study(&plan)?;
    let mut long = Vec::new();
    for r in &results {
        let dir = format!("rep_{:03}", r.replicate);
        out.write_json(&format!("{dir}/truth.json"), &r.truth)?;
        for m in &r.methods {
            out.write_json(&format!("{dir}/summary_{}.json", m.method), &m.summary)?;
            for k in 0..m.metrics.bias.len() {
                long.push(vec![
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    m.method.clone(),
                    (k + 1).to_string(),
                    m.metrics.bias[k].to_string(),
                    m.scaled_bias[k].to_string(),
                    m.metrics.sq_error[k].to_string(),
                    (m.metrics.covered[k] as u8).to_string(),
                ]);
            }
        }
    }
    let head = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    out.write_csv(
        "replicates.csv",
        &head(&["replicate", "seed", "method", "outcome", "bias", "scaled_bias", "sq_error", "covered"]),
        &long,
    )?;
    let rows: Vec<Vec<String>> = aggregate(&results)?
        .into_iter()
        .map(|r| {
            vec![
                r.method,
                r.outcome.to_string(),
                r.replicates.to_string(),
                r.mean_bias.to_string(),
                r.mean_scaled_bias.to_string(),
                r.mse.to_string(),
                r.coverage.to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "metrics.csv",
        &head(&["method", "outcome", "replicates", "mean_bias", "mean_scaled_bias", "mse", "coverage"]),
        &rows,
    )?;
    out.finish(manifest, started)
}
