//! `budget-router`: data preparation, single episodes, offline optima and
//! full experiment plans for the budget-constrained router.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;
use run::Outputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(budget_router::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

impl From<budget_router::Error> for CliError {
    fn from(e: budget_router::Error) -> Self {
        match e {
            budget_router::Error::InvalidConfig { field, message } => CliError::Config { field, message },
            other => CliError::Core(other),
        }
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

fn report_error(e: &CliError) {
    let line = match e {
        CliError::Config { field, message } => ErrorLine {
            error: "invalid_config",
            field: Some(field),
            message: message.clone(),
        },
        CliError::Io(m) => ErrorLine {
            error: "io",
            field: None,
            message: m.clone(),
        },
        CliError::Core(inner) => ErrorLine {
            error: "runtime",
            field: None,
            message: inner.to_string(),
        },
    };
    eprintln!("{}", serde_json::to_string(&line).unwrap_or_else(|_| e.to_string()));
}

#[derive(Parser)]
#[command(name = "budget-router", version, about = "Training-free budget-constrained LLM routing")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload.
    Synth(Flags),
    /// Load, validate and split a dataset.
    Ingest(Flags),
    /// Build and save the neighbor index.
    Index(Flags),
    /// Run a single episode.
    Route(Flags),
    /// Solve the offline allocation problems.
    Oracle(Flags),
    /// Run a full experiment plan.
    Experiment(Flags),
    /// Re-render CSV summaries from a saved report.
    Report(Flags),
}

/// One flag per top-level configuration key.
#[derive(Args, Default)]
struct Flags {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    test_dataset: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    prediction_costs: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    budget_factor: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<String>>,
    /// Comma list or half-open range such as `0..10`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    admission: Option<String>,
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    volumes: Option<Vec<usize>>,
    #[arg(long)]
    random_split_draws: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clamp_zero: Option<bool>,
    #[arg(long)]
    oracles: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::config("seeds", format!("expected a list like 0,1,2 or a range like 0..10, got '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

impl Flags {
    fn into_config(self) -> Result<RunConfig, CliError> {
        Ok(RunConfig {
            dataset: self.dataset,
            test_dataset: self.test_dataset,
            embeddings: self.embeddings,
            format: self.format,
            test_size: self.test_size,
            seed: self.seed,
            index: self.index,
            predictions: self.predictions,
            prediction_costs: self.prediction_costs,
            report: self.report,
            alpha: self.alpha,
            epsilon: self.epsilon,
            k: self.k,
            budget_factor: self.budget_factor,
            split: self.split,
            order: self.order,
            seeds: self.seeds.as_deref().map(parse_seeds).transpose()?,
            admission: self.admission,
            algorithms: self.algorithms,
            volumes: self.volumes,
            random_split_draws: self.random_split_draws,
            batch_size: self.batch_size,
            clamp_zero: self.clamp_zero,
            oracles: self.oracles,
            out: self.out,
            ..RunConfig::default()
        })
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("BUDGET_ROUTER_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config("BUDGET_ROUTER_THREADS", format!("expected a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config("BUDGET_ROUTER_THREADS", e.to_string()))
}

type Action = fn(&RunConfig, &mut Outputs) -> Result<(), CliError>;

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (flags, action): (Flags, Action) = match cli.command {
        Command::Synth(f) => (f, run::synth),
        Command::Ingest(f) => (f, run::ingest),
        Command::Index(f) => (f, run::index),
        Command::Route(f) => (f, run::route),
        Command::Oracle(f) => (f, run::oracle),
        Command::Experiment(f) => (f, run::experiment),
        Command::Report(f) => (f, run::report),
    };
    let file = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(&flags.into_config()?).completed();
    // reject bad values before touching the output directory
    cfg.plan()?;
    cfg.index_config()?;
    cfg.data_format()?;
    let mut out = Outputs::open(cfg.out.as_deref().unwrap_or("out".as_ref()))?;
    match action(&cfg, &mut out) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code())
        }
    }
}
