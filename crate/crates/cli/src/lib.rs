//! Command implementations behind the `mixlogit` binary.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or input error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mixlogit::benchmark::{self, BenchmarkSettings, LevelPlan};
use mixlogit::engine::{Executor, GibbsConfig, PosteriorSummary};
use mixlogit::esbda::{self, EarlyStopConfig, PriorModel, StopReport};
use mixlogit::io::{self, DatasetSchema};
use mixlogit::metrics::{self, MetricsPair};
use mixlogit::simulators::SimulatorRegistry;
use mixlogit::synth::{self, AttributeLaw, GroundTruth};
use mixlogit::{Dataset, UtilitySpec};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}: no such file or directory")]
    MissingPath(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mixlogit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mixlogit", version, about = "Hierarchical Bayes mixed logit with early-stopping transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a model from neutral starting values.
    Estimate(EstimateArgs),
    /// Transfer a prior model to new data with early stopping.
    Transfer(TransferArgs),
    /// Run a multi-level benchmark plan.
    Benchmark(BenchmarkArgs),
    /// Evaluate a model artifact on a dataset.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset from a model artifact.
    Synth(SynthArgs),
}

/// Sampler settings shared by the estimating commands.
#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 10_000)]
    pub epochs: usize,
    /// Retention and checkpoint interval.
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    /// Simulation draws for unconditional probabilities.
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    /// Retained draws averaged into the reported estimates.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    /// Worker threads for the individual layer; defaults to available cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ChainArgs {
    pub fn gibbs(&self) -> GibbsConfig {
        GibbsConfig {
            max_epochs: self.epochs,
            thin: self.thin,
            draws: self.draws,
            summary_window: self.window,
            seed: self.seed,
            ..GibbsConfig::default()
        }
    }

    pub fn executor(&self) -> CliResult<Executor> {
        let workers = self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        Ok(Executor::with_workers(workers)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct StopArgs {
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 200)]
    pub patience: usize,
    /// Run to the epoch cap (plain prior-started estimation).
    #[arg(long)]
    pub no_early_stop: bool,
}

impl StopArgs {
    pub fn config(&self) -> EarlyStopConfig {
        if self.no_early_stop {
            EarlyStopConfig::disabled()
        } else {
            EarlyStopConfig {
                patience: Some(self.patience),
                min_epochs: 0,
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, alias = "train")]
    pub data: PathBuf,
    /// Optional held-out data traced alongside the training CEL.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub prior: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub stop: StopArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Level plan (TOML).
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub stop: StopArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Model artifact to evaluate.
    #[arg(long, alias = "model")]
    pub prior: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Generating model artifact.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub individuals: usize,
    #[arg(long)]
    pub situations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|m| println!("cel {:.6}\ngmpca {:.6}", m.cel, m.gmpca)),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath(path.to_path_buf()))
    }
}

fn load_spec(path: &Path) -> CliResult<Arc<UtilitySpec>> {
    require(path)?;
    Ok(Arc::new(UtilitySpec::load(path)?))
}

fn load_data(path: &Path, spec: &Arc<UtilitySpec>) -> CliResult<Dataset> {
    require(path)?;
    let loaded = io::load_dataset(path, &DatasetSchema::default(), Arc::clone(spec))?;
    if loaded.dropped_situations > 0 {
        log::warn!("{}: dropped {} choice situations", path.display(), loaded.dropped_situations);
    }
    Ok(loaded.dataset)
}

fn load_prior(path: &Path, spec: &Arc<UtilitySpec>) -> CliResult<PriorModel> {
    require(path)?;
    Ok(io::load_model(path, Arc::clone(spec))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(mixlogit::Error::from)?;
    bytes.push(b'\n');
    Ok(io::write_atomic(path, &bytes)?)
}

/// Coefficient table: mean with stars and posterior SD per row.
pub fn render_summary(summary: &PosteriorSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "draws {} (epochs {}..={})",
        summary.draw_count, summary.first_epoch, summary.last_epoch
    );
    let _ = writeln!(out, "{:<28} {:>12} {:<4} {:>10}", "", "mean", "", "sd");
    let mut row = |label: String, mean: f64, sd: f64| {
        let stars = metrics::significance_stars(mean, sd).stars();
        let _ = writeln!(out, "{label:<28} {mean:>12.4} {stars:<4} {sd:>10.4}");
    };
    for c in &summary.coefficients {
        match c.sigma {
            Some(sigma) => {
                row(format!("mu_{}", c.name), c.mean.mean, c.mean.sd);
                row(format!("sigma_{}", c.name), sigma.mean, sigma.sd);
                row(format!("simulated_{}", c.name), c.simulated.mean, c.simulated.sd);
            }
            None => row(c.name.clone(), c.mean.mean, c.mean.sd),
        }
    }
    out
}

fn write_estimates(out: &Path, model: &PriorModel, summary: &PosteriorSummary, seed: u64) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    io::save_model(model, Some(seed), out.join("model.json"))?;
    write_json(&out.join("summary.json"), summary)?;
    io::write_atomic(out.join("summary.txt"), render_summary(summary).as_bytes())?;
    Ok(())
}

/// Nonconjugate estimation: writes `model.json`, `summary.json`,
/// `summary.txt` and `trace.csv` under `--out`.
pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let spec = load_spec(&args.spec)?;
    let train = load_data(&args.data, &spec)?;
    let validation = args.validation.as_deref().map(|p| load_data(p, &spec)).transpose()?;
    let gibbs = args.chain.gibbs();
    let executor = args.chain.executor()?;
    let mut scorer = esbda::CelScorer {
        train: Some(&train),
        validation: validation.as_ref(),
        draws: gibbs.draws,
        seed: gibbs.seed,
    };
    let init = esbda::init_nonconjugate(&train);
    let run = esbda::run_esbda_with(&train, init, &mut scorer, &gibbs, &EarlyStopConfig::disabled(), &executor)?;
    let model = PriorModel::from_summary(Arc::clone(&spec), &run.summary, provenance(&args.data))?;
    write_estimates(&args.out, &model, &run.summary, gibbs.seed)?;
    io::write_atomic(args.out.join("trace.csv"), run.trace.to_csv().as_bytes())?;
    log::info!("estimated over {} epochs", run.epochs_run());
    Ok(())
}

fn provenance(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct TransferReport {
    epochs_run: usize,
    patience: Option<usize>,
    stopped_early: bool,
    stop_epoch: Option<usize>,
    output_epoch: Option<usize>,
    best_epoch: Option<usize>,
    best_validation_cel: Option<f64>,
    test: Option<MetricsPair>,
}

/// Early-stopping transfer: writes `model.json`, `summary.json`,
/// `summary.txt`, `trace.csv` and `stop_report.json` under `--out`.
pub fn cmd_transfer(args: &TransferArgs) -> CliResult<()> {
    let spec = load_spec(&args.spec)?;
    let prior = load_prior(&args.prior, &spec)?;
    let train = load_data(&args.train, &spec)?;
    let validation = load_data(&args.validation, &spec)?;
    let test = args.test.as_deref().map(|p| load_data(p, &spec)).transpose()?;
    let gibbs = args.chain.gibbs();
    let stop = args.stop.config();
    let executor = args.chain.executor()?;
    let run = esbda::run_esbda(&train, &validation, Some(&prior), &gibbs, &stop, &executor)?;
    let model = PriorModel::from_summary(Arc::clone(&spec), &run.summary, provenance(&args.train))?;
    let test_metrics = test
        .as_ref()
        .map(|t| esbda::evaluate_params(&model.params, t, gibbs.draws, gibbs.seed))
        .transpose()?;
    write_estimates(&args.out, &model, &run.summary, gibbs.seed)?;
    io::write_atomic(args.out.join("trace.csv"), run.trace.to_csv().as_bytes())?;
    let stop_report: Option<StopReport> = run.stop;
    let report = TransferReport {
        epochs_run: run.epochs_run(),
        patience: stop.patience,
        stopped_early: stop_report.is_some(),
        stop_epoch: stop_report.map(|s| s.stop_epoch),
        output_epoch: stop_report.map(|s| s.output_epoch),
        best_epoch: run.trace.best_epoch,
        best_validation_cel: run.trace.best_cel,
        test: test_metrics,
    };
    write_json(&args.out.join("stop_report.json"), &report)?;
    Ok(())
}

/// Multi-level benchmark: writes `report.json`, `metrics.csv`, `tables.txt`
/// and `traces/` under `--out`.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    require(&args.plan)?;
    let plan = LevelPlan::load(&args.plan)?;
    let base = args.plan.parent().unwrap_or(Path::new("."));
    for entry in std::iter::once(&plan.spec).chain(plan.levels.iter().map(|l| &l.data)) {
        require(&base.join(entry))?;
    }
    let (_, levels) = plan.resolve(base)?;
    let registry = match &plan.simulators {
        Some(names) => SimulatorRegistry::standard().select(names)?,
        None => SimulatorRegistry::standard(),
    };
    let settings = BenchmarkSettings {
        gibbs: args.chain.gibbs(),
        stop: args.stop.config(),
        cost_coefficient: plan.cost_coefficient.clone(),
        time_coefficients: plan.time_coefficients.clone(),
    };
    let executor = args.chain.executor()?;
    let report = benchmark::run_benchmark(&levels, &registry, &settings, &executor)?;
    benchmark::write_report(&report, &args.out)?;
    Ok(())
}

/// Direct application of a model artifact to a dataset.
pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<MetricsPair> {
    let spec = load_spec(&args.spec)?;
    let model = load_prior(&args.prior, &spec)?;
    let data = load_data(&args.data, &spec)?;
    Ok(esbda::direct_application(&model, &data, args.draws, args.seed)?)
}

/// Synthetic panel from a model artifact: writes `data.csv` and
/// `truth.json` under `--out`.
pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let spec = load_spec(&args.spec)?;
    let truth = load_prior(&args.truth, &spec)?;
    let gt = GroundTruth {
        spec: Arc::clone(&spec),
        params: truth.params.clone(),
        seed: args.seed,
    };
    let data = synth::generate_synthetic(&gt, args.individuals, args.situations, AttributeLaw::default())?;
    std::fs::create_dir_all(&args.out)?;
    io::save_dataset(&data, args.out.join("data.csv"))?;
    io::save_model(&truth, Some(args.seed), args.out.join("truth.json"))?;
    Ok(())
}
