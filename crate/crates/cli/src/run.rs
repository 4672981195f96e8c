//! Subcommand implementations. Every command writes its artifacts into the
//! output directory together with `config.toml` (the fully resolved
//! configuration) and `run_manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use budget_router::baselines::{load_prediction_file, Predictions};
use budget_router::harness::{
    base_budget, order_stream, run_algorithm, run_plan, split_budget, Algorithm, ExperimentPlan, ExperimentReport,
    ReplicaSeeds, Workspace,
};
use budget_router::ann::HnswIndex;
use budget_router::ingest::{load_manifest_with, write_records, DatasetManifest, LoadOptions};
use budget_router::metrics::compute_metrics;
use budget_router::oracle::{offline_optima, solve_relaxed_lp, AllocationProblem};
use budget_router::router::{run_episode, RouterConfig};
use budget_router::synth::generate;

use crate::config::RunConfig;
use crate::CliError;

/// Files written so far; removed again if the command fails.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::config("out", format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    /// Registers `name` and returns its full path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, text + "\n")
    }

    pub fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_sha256: String,
    config: &'a RunConfig,
    seeds: SeedRecord,
    versions: Versions,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

#[derive(Serialize)]
struct SeedRecord {
    data_split: u64,
    replicas: Vec<u64>,
    learner: u64,
    index: u64,
    synth: u64,
}

#[derive(Serialize)]
struct Versions {
    budget_router: &'static str,
    manifest_format: u32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Writes `config.toml` and `run_manifest.json` after the artifacts.
fn finish(command: &str, cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let text = cfg.to_toml();
    let artifacts: Vec<PathBuf> = out.files.clone();
    out.write("config.toml", &text)?;
    let inputs = [&cfg.dataset, &cfg.test_dataset, &cfg.embeddings, &cfg.index, &cfg.predictions, &cfg.prediction_costs, &cfg.report]
        .into_iter()
        .flatten()
        .map(|p| digest(p))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = artifacts
        .iter()
        .map(|p| {
            let mut d = digest(p)?;
            d.path = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(d)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = RunManifest {
        command,
        config_sha256: sha256_hex(text.as_bytes()),
        config: cfg,
        seeds: SeedRecord {
            data_split: cfg.seed.unwrap_or_default(),
            replicas: cfg.seeds.clone().unwrap_or_default(),
            learner: cfg.learner.seed.unwrap_or_default(),
            index: cfg.hnsw.seed.unwrap_or_default(),
            synth: cfg.synth.seed.unwrap_or_default(),
        },
        versions: Versions {
            budget_router: env!("CARGO_PKG_VERSION"),
            manifest_format: 1,
        },
        inputs,
        outputs,
    };
    out.write_json("run_manifest.json", &manifest)
}

fn load_raw(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let path = cfg.dataset.as_ref().ok_or_else(|| CliError::config("dataset", "a dataset path is required"))?;
    let opts = LoadOptions {
        catalog: None,
        embeddings: cfg.embeddings.clone(),
        test_path: cfg.test_dataset.clone(),
    };
    Ok(load_manifest_with(path, cfg.data_format()?, &opts)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let manifest = load_raw(cfg)?;
    if !manifest.test_queries.is_empty() {
        return Ok(manifest);
    }
    let size = cfg
        .test_size
        .ok_or_else(|| CliError::config("test_size", "dataset has no test split; set test_size or test_dataset"))?;
    Ok(manifest.resplit(size, cfg.seed.unwrap_or_default())?)
}

fn workspace(cfg: &RunConfig) -> Result<Workspace, CliError> {
    let manifest = load_dataset(cfg)?;
    let index_cfg = cfg.index_config()?;
    let ws = match &cfg.index {
        Some(path) => {
            let index = HnswIndex::load(path)?;
            Workspace::with_index(manifest, index, index_cfg.k_neighbors)?
        }
        None => Workspace::prepare(manifest, &index_cfg)?,
    };
    let m = ws.manifest.num_models();
    let scores = cfg.predictions.as_ref().map(|p| load_prediction_file(p, m)).transpose()?;
    let costs = cfg.prediction_costs.as_ref().map(|p| load_prediction_file(p, m)).transpose()?;
    Ok(if scores.is_some() || costs.is_some() {
        ws.with_predictions(Predictions { scores, costs })
    } else {
        ws
    })
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    provenance: &'a str,
    models: Vec<&'a str>,
    embedding_dimension: usize,
    historical: usize,
    test: usize,
    base_budget: f64,
}

fn summary(m: &DatasetManifest) -> DatasetSummary<'_> {
    DatasetSummary {
        provenance: &m.provenance,
        models: m.catalog.models.iter().map(|s| s.name.as_str()).collect(),
        embedding_dimension: m.embedding_dimension,
        historical: m.historical.len(),
        test: m.test_queries.len(),
        base_budget: base_budget(&m.test_queries),
    }
}

fn write_split(m: &DatasetManifest, cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let format = cfg.data_format()?;
    let ext = match format {
        budget_router::ingest::DataFormat::Csv => "csv",
        budget_router::ingest::DataFormat::Jsonl => "jsonl",
    };
    let hist = out.path(&format!("historical.{ext}"));
    write_records(&hist, format, &m.catalog, &m.provenance, &m.historical)?;
    let test = out.path(&format!("test.{ext}"));
    write_records(&test, format, &m.catalog, &m.provenance, &m.test_queries)?;
    out.write_json("dataset.json", &summary(m))
}

pub fn synth(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let manifest = generate(&cfg.synth_config()?)?;
    info!("generated {} historical and {} test queries", manifest.historical.len(), manifest.test_queries.len());
    write_split(&manifest, cfg, out)?;
    finish("synth", cfg, out)
}

pub fn ingest(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let manifest = load_dataset(cfg)?;
    info!("loaded {} historical and {} test queries", manifest.historical.len(), manifest.test_queries.len());
    write_split(&manifest, cfg, out)?;
    finish("ingest", cfg, out)
}

#[derive(Serialize)]
struct IndexSummary {
    records: usize,
    dim: usize,
    mean_degree: f64,
    config: budget_router::ann::IndexConfig,
}

pub fn index(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    // without a requested split the whole file is historical
    let manifest = match cfg.test_size {
        Some(_) => load_dataset(cfg)?,
        None => load_raw(cfg)?,
    };
    let index_cfg = cfg.index_config()?;
    let index = HnswIndex::build(&manifest.historical, &index_cfg)?;
    let path = out.path("index.bin");
    index.save(&path)?;
    out.write_json(
        "index.json",
        &IndexSummary {
            records: index.len(),
            dim: index.dim(),
            mean_degree: index.mean_degree(),
            config: index_cfg,
        },
    )?;
    finish("index", cfg, out)
}

/// The first entry of every list-valued key picks the single episode.
struct EpisodeSetup {
    plan: ExperimentPlan,
    algorithm: Algorithm,
    seeds: ReplicaSeeds,
    budgets: budget_router::types::BudgetVector,
}

fn episode_setup(cfg: &RunConfig, ws: &Workspace) -> Result<EpisodeSetup, CliError> {
    let plan = cfg.plan()?;
    plan.validate(ws.manifest.num_models(), ws.manifest.test_queries.len())?;
    let seeds = ReplicaSeeds::derive(plan.seeds[0], 0, 0);
    let base = base_budget(&ws.manifest.test_queries) * plan.budget_factors[0];
    let budgets = split_budget(base, plan.splits[0], &ws.stats, seeds.split_seed)?;
    Ok(EpisodeSetup {
        algorithm: plan.algorithms[0],
        seeds,
        budgets,
        plan,
    })
}

#[derive(Serialize)]
struct EpisodeSummary {
    algorithm: String,
    budgets: Vec<f64>,
    c_hat_opt: f64,
    metrics: budget_router::metrics::MetricsReport,
    violations: Vec<usize>,
}

pub fn route(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let ws = workspace(cfg)?;
    let setup = episode_setup(cfg, &ws)?;
    let stream = order_stream(&ws.manifest.test_queries, setup.plan.orders[0], setup.seeds.order_seed);
    let log = if setup.algorithm == Algorithm::Ours {
        let router = RouterConfig {
            seed: setup.seeds.router_seed,
            ..setup.plan.router.clone()
        };
        let outcome = run_episode(&stream, &ws.ann, &setup.budgets, &router)?;
        out.write_json("learned.json", &outcome.learned)?;
        outcome.log
    } else {
        run_algorithm(&ws, setup.algorithm, &stream, &setup.budgets, &setup.plan, &setup.seeds)?
    };
    let estimates = ws.estimates(&ws.manifest.test_queries)?;
    let optima = offline_optima(&ws.manifest.test_queries, &estimates, &setup.budgets)?;
    out.write("episode.jsonl", log.to_jsonl_string())?;
    out.write_json(
        "metrics.json",
        &EpisodeSummary {
            algorithm: setup.algorithm.name().to_string(),
            budgets: setup.budgets.per_model.clone(),
            c_hat_opt: optima.c_hat_opt.value,
            metrics: compute_metrics(&log, optima.c_hat_opt.value),
            violations: log.budget_violations(),
        },
    )?;
    finish("route", cfg, out)
}

pub fn oracle(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let ws = workspace(cfg)?;
    let setup = episode_setup(cfg, &ws)?;
    let test = &ws.manifest.test_queries;
    let estimates = ws.estimates(test)?;
    let optima = offline_optima(test, &estimates, &setup.budgets)?;
    let problem = AllocationProblem::from_truth(test, &setup.budgets);
    let solution = solve_relaxed_lp(&problem)?;
    problem.write_json(&out.path("problem.json"))?;
    solution.write_json(&out.path("solution.json"))?;
    out.write_json("oracle.json", &optima)?;
    finish("oracle", cfg, out)
}

fn write_report(report: &ExperimentReport, out: &mut Outputs) -> Result<(), CliError> {
    report.write_summary_csv(&out.path("summary.csv"))?;
    report.write_long_csv(&out.path("long.csv"))?;
    Ok(())
}

pub fn experiment(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let ws = workspace(cfg)?;
    let plan = cfg.plan()?;
    let report = run_plan(&ws, &plan)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} rows failed; see the error column", report.rows.len());
    }
    report.write_json(&out.path("report.json"))?;
    write_report(&report, out)?;
    print_summary(&report);
    finish("experiment", cfg, out)
}

pub fn report(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let path = cfg.report.as_ref().ok_or_else(|| CliError::config("report", "path to a report.json is required"))?;
    let report = ExperimentReport::read_json(path)?;
    write_report(&report, out)?;
    print_summary(&report);
    finish("report", cfg, out)
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{:<8} {:>6} {:<22} {:<12} {:<14} {:>12} {:>12} {:>10} {:>8}",
        "volume", "factor", "split", "order", "algorithm", "perf", "ppc", "tput", "rp"
    );
    for s in &report.summary {
        println!(
            "{:<8} {:>6} {:<22} {:<12} {:<14} {:>12.3} {:>12.1} {:>10.1} {:>8}",
            s.volume,
            s.budget_factor,
            s.split,
            s.order,
            s.algorithm,
            s.perf_mean,
            s.ppc_mean,
            s.tput_mean,
            s.rp_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
    }
}
