//! Experiment orchestration: budget splits and scaling, arrival orders,
//! seeds, and report assembly.

mod budget;
mod order;
mod report;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{AnnEstimator, CachedFeatures, ExactEstimator, FeatureEstimate, FeatureSource, HnswIndex, IndexConfig};
use crate::baselines::{route_baseline, BaselineConfig, BaselineInputs, BaselineKind, Predictions};
use crate::error::{Error, Result};
use crate::ingest::DatasetManifest;
use crate::metrics::{compute_metrics, EpisodeLog};
use crate::oracle::{offline_optima, OfflineOptima, OptimumSummary};
use crate::router::{run_episode, RouterConfig};
use crate::types::{BudgetVector, QueryRecord};

pub use budget::{base_budget, split_budget, HistoricalStats, SplitStrategy};
pub use order::{order_stream, OrderRegime};
pub use report::{summarize_rows, ExperimentReport, MetricRow, ReportRow, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Ours,
    Baseline(BaselineKind),
}

impl Algorithm {
    /// Our router plus every baseline that needs no external predictions.
    pub fn in_repo() -> Vec<Algorithm> {
        std::iter::once(Algorithm::Ours)
            .chain(BaselineKind::IN_REPO.into_iter().map(Algorithm::Baseline))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ours => crate::router::ALGORITHM_NAME,
            Algorithm::Baseline(k) => k.name(),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == crate::router::ALGORITHM_NAME {
            Ok(Algorithm::Ours)
        } else {
            s.parse().map(Algorithm::Baseline)
        }
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> Self {
        a.name().to_string()
    }
}

/// Names used for the two oracle reference rows.
pub const C_OPT: &str = "c_opt";
pub const C_HAT_OPT: &str = "c_hat_opt";

/// Data and cached estimates shared by every cell of a plan.
pub struct Workspace {
    pub manifest: DatasetManifest,
    pub index: HnswIndex,
    pub stats: HistoricalStats,
    pub ann: CachedFeatures,
    pub knn: CachedFeatures,
    pub predictions: Option<Predictions>,
}

impl Workspace {
    pub fn prepare(manifest: DatasetManifest, index_config: &IndexConfig) -> Result<Self> {
        index_config.validate()?;
        let index = HnswIndex::build(&manifest.historical, index_config)?;
        Self::with_index(manifest, index, index_config.k_neighbors)
    }

    /// Uses a prebuilt index; `k` neighbors feed every estimate.
    pub fn with_index(manifest: DatasetManifest, index: HnswIndex, k: usize) -> Result<Self> {
        manifest.validate()?;
        let stats = HistoricalStats::from_records(&manifest.historical)?;
        let ann = CachedFeatures::build(&AnnEstimator::new(&index, &manifest.historical, k)?, &manifest.test_queries)?;
        let exact = ExactEstimator {
            records: &manifest.historical,
            k,
            distance: index.config().distance,
        };
        let knn = CachedFeatures::build(&exact, &manifest.test_queries)?;
        Ok(Self {
            manifest,
            index,
            stats,
            ann,
            knn,
            predictions: None,
        })
    }

    pub fn with_predictions(mut self, predictions: Predictions) -> Self {
        self.predictions = Some(predictions);
        self
    }

    pub fn estimates(&self, queries: &[QueryRecord]) -> Result<Vec<FeatureEstimate>> {
        queries.iter().map(|q| self.ann.estimate(q)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub algorithms: Vec<Algorithm>,
    pub budget_factors: Vec<f64>,
    pub splits: Vec<SplitStrategy>,
    pub orders: Vec<OrderRegime>,
    /// Test-stream prefixes to run; empty means the whole test set.
    #[serde(default)]
    pub volumes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub router: RouterConfig,
    pub baseline: BaselineConfig,
    /// Budget draws averaged for the random split.
    pub random_split_draws: usize,
    /// Add `C_opt` and `Ĉ_opt` reference rows.
    pub oracles: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::in_repo(),
            budget_factors: vec![0.25, 0.5, 1.0, 1.5, 2.0],
            splits: vec![SplitStrategy::CostEfficiencySqrt],
            orders: vec![OrderRegime::Random(1)],
            volumes: vec![],
            seeds: (0..10).collect(),
            router: RouterConfig::default(),
            baseline: BaselineConfig::default(),
            random_split_draws: 100,
            oracles: true,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self, m: usize, test_len: usize) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "at least one algorithm is required"));
        }
        if self.budget_factors.is_empty() || self.budget_factors.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::config("budget_factors", "need at least one finite nonnegative factor"));
        }
        if self.splits.is_empty() {
            return Err(Error::config("splits", "at least one split strategy is required"));
        }
        for s in &self.splits {
            s.validate(m)?;
        }
        if self.orders.is_empty() || self.orders.iter().any(|o| o.replicas() == 0) {
            return Err(Error::config("orders", "need at least one order regime with a positive shuffle count"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if let Some(v) = self.volumes.iter().find(|&&v| v == 0 || v > test_len) {
            return Err(Error::config("volumes", format!("volume {v} outside 1..={test_len}")));
        }
        if self.splits.contains(&SplitStrategy::Random) && self.random_split_draws == 0 {
            return Err(Error::config("random_split_draws", "must be positive"));
        }
        self.router.validate()?;
        Ok(())
    }

    fn volumes_or_all(&self, test_len: usize) -> Vec<usize> {
        if self.volumes.is_empty() {
            vec![test_len]
        } else {
            self.volumes.clone()
        }
    }
}

/// Independent seeds per concern, derived from one plan seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSeeds {
    pub seed: u64,
    pub shuffle: usize,
    pub draw: usize,
    pub order_seed: u64,
    pub router_seed: u64,
    pub baseline_seed: u64,
    pub split_seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(seed: u64, concern: u64, replica: usize) -> u64 {
    splitmix(splitmix(seed ^ concern.rotate_left(32)) ^ replica as u64)
}

impl ReplicaSeeds {
    pub fn derive(seed: u64, shuffle: usize, draw: usize) -> Self {
        Self {
            seed,
            shuffle,
            draw,
            order_seed: derive(seed, 1, shuffle),
            router_seed: derive(seed, 2, shuffle),
            baseline_seed: derive(seed, 3, shuffle),
            split_seed: derive(seed, 4, draw),
        }
    }
}

/// One configuration point of the plan grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub volume: usize,
    pub budget_factor: f64,
    pub split: SplitStrategy,
    pub order: OrderRegime,
}

struct Replica {
    cell: usize,
    seeds: ReplicaSeeds,
    budgets: BudgetVector,
    optimum: usize,
}

/// Runs one algorithm on one ordered stream.
pub fn run_algorithm(
    workspace: &Workspace,
    algorithm: Algorithm,
    stream: &[QueryRecord],
    budgets: &BudgetVector,
    plan: &ExperimentPlan,
    seeds: &ReplicaSeeds,
) -> Result<EpisodeLog> {
    match algorithm {
        Algorithm::Ours => {
            let cfg = RouterConfig {
                seed: seeds.router_seed,
                ..plan.router.clone()
            };
            Ok(run_episode(stream, &workspace.ann, budgets, &cfg)?.log)
        }
        Algorithm::Baseline(kind) => {
            let cfg = BaselineConfig {
                seed: seeds.baseline_seed,
                admission: plan.router.admission,
                ..plan.baseline.clone()
            };
            let inputs = BaselineInputs {
                ann: &workspace.ann,
                knn: &workspace.knn,
                predictions: workspace.predictions.as_ref(),
            };
            route_baseline(kind, stream, &inputs, budgets, &cfg)
        }
    }
}

fn oracle_row(summary: &OptimumSummary, reference: f64) -> MetricRow {
    MetricRow {
        performance: summary.value,
        cost: summary.cost,
        performance_per_cost: if summary.cost > 0.0 { summary.value / summary.cost } else { 0.0 },
        throughput: summary.throughput,
        relative_performance: (reference > 0.0).then(|| summary.value / reference),
        s_max: 0.0,
        violations: 0,
    }
}

/// Executes every (cell × replica × algorithm) of the plan. Failures are
/// recorded on their rows instead of aborting the run.
pub fn run_plan(workspace: &Workspace, plan: &ExperimentPlan) -> Result<ExperimentReport> {
    let m = workspace.manifest.num_models();
    let test = &workspace.manifest.test_queries;
    plan.validate(m, test.len())?;

    let mut cells = Vec::new();
    for &volume in &plan.volumes_or_all(test.len()) {
        for &budget_factor in &plan.budget_factors {
            for &split in &plan.splits {
                for &order in &plan.orders {
                    cells.push(CellKey {
                        volume,
                        budget_factor,
                        split,
                        order,
                    });
                }
            }
        }
    }

    // Budgets per replica; optima are shared between identical budget vectors.
    let mut replicas = Vec::new();
    let mut optimum_index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
    let mut optimum_inputs: Vec<(usize, BudgetVector)> = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let base = base_budget(&test[..cell.volume]) * cell.budget_factor;
        let draws = if cell.split == SplitStrategy::Random {
            plan.random_split_draws
        } else {
            1
        };
        for &seed in &plan.seeds {
            for shuffle in 0..cell.order.replicas() {
                for draw in 0..draws {
                    let seeds = ReplicaSeeds::derive(seed, shuffle, draw);
                    let budgets = split_budget(base, cell.split, &workspace.stats, seeds.split_seed)?;
                    let key = (cell.volume, budgets.per_model.iter().map(|b| b.to_bits()).collect());
                    let optimum = *optimum_index.entry(key).or_insert_with(|| {
                        optimum_inputs.push((cell.volume, budgets.clone()));
                        optimum_inputs.len() - 1
                    });
                    replicas.push(Replica {
                        cell: c,
                        seeds,
                        budgets,
                        optimum,
                    });
                }
            }
        }
    }

    let estimates = workspace.estimates(test)?;
    let optima: Vec<std::result::Result<OfflineOptima, String>> = optimum_inputs
        .par_iter()
        .map(|(volume, budgets)| {
            offline_optima(&test[..*volume], &estimates[..*volume], budgets).map_err(|e| e.to_string())
        })
        .collect();

    let rows: Vec<Vec<ReportRow>> = replicas
        .par_iter()
        .map(|r| {
            let cell = &cells[r.cell];
            let stream = order_stream(&test[..cell.volume], cell.order, r.seeds.order_seed);
            let optimum = &optima[r.optimum];
            let reference = optimum.as_ref().map(|o| o.c_hat_opt.value).unwrap_or(0.0);
            let mut out = Vec::with_capacity(plan.algorithms.len() + 2);
            for &alg in &plan.algorithms {
                let result = run_algorithm(workspace, alg, &stream, &r.budgets, plan, &r.seeds);
                let (metrics, error) = match (result, optimum) {
                    (Ok(log), Ok(_)) => {
                        let rep = compute_metrics(&log, reference);
                        (Some(MetricRow::from_report(&rep, log.budget_violations().len())), None)
                    }
                    (Ok(_), Err(e)) => (None, Some(format!("offline optimum failed: {e}"))),
                    (Err(e), _) => (None, Some(e.to_string())),
                };
                out.push(ReportRow::new(cell, alg.name(), r.seeds, &r.budgets, metrics, error));
            }
            if plan.oracles {
                match optimum {
                    Ok(o) => {
                        for (name, summary) in [(C_OPT, &o.c_opt), (C_HAT_OPT, &o.c_hat_opt)] {
                            let metrics = oracle_row(summary, reference);
                            out.push(ReportRow::new(cell, name, r.seeds, &r.budgets, Some(metrics), None));
                        }
                    }
                    Err(e) => {
                        for name in [C_OPT, C_HAT_OPT] {
                            out.push(ReportRow::new(cell, name, r.seeds, &r.budgets, None, Some(e.clone())));
                        }
                    }
                }
            }
            out
        })
        .collect();
    let rows: Vec<ReportRow> = rows.into_iter().flatten().collect();
    let summary = summarize_rows(&rows);
    Ok(ExperimentReport {
        plan: plan.clone(),
        provenance: workspace.manifest.provenance.clone(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn workspace() -> Workspace {
        let man = generate(&SynthConfig {
            historical: 400,
            test: 200,
            clusters: 8,
            dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        Workspace::prepare(man, &IndexConfig::default()).unwrap()
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("ours".parse::<Algorithm>().unwrap(), Algorithm::Ours);
        assert_eq!(
            "batch_split".parse::<Algorithm>().unwrap(),
            Algorithm::Baseline(BaselineKind::BatchSplit)
        );
        assert_eq!(Algorithm::in_repo().len(), 7);
    }

    #[test]
    fn seeds_differ_by_concern() {
        let s = ReplicaSeeds::derive(1, 0, 0);
        let all = [s.order_seed, s.router_seed, s.baseline_seed, s.split_seed];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_ne!(ReplicaSeeds::derive(1, 1, 0).order_seed, s.order_seed);
    }

    #[test]
    fn single_cell_matches_direct_run() {
        let ws = workspace();
        let plan = ExperimentPlan {
            algorithms: vec![Algorithm::Ours],
            budget_factors: vec![1.0],
            seeds: vec![3],
            oracles: false,
            ..ExperimentPlan::default()
        };
        let report = run_plan(&ws, &plan).unwrap();
        assert_eq!(report.rows.len(), 1);

        let seeds = ReplicaSeeds::derive(3, 0, 0);
        let test = &ws.manifest.test_queries;
        let budgets = split_budget(base_budget(test), SplitStrategy::CostEfficiencySqrt, &ws.stats, seeds.split_seed).unwrap();
        let stream = order_stream(test, OrderRegime::Random(1), seeds.order_seed);
        let cfg = RouterConfig {
            seed: seeds.router_seed,
            ..RouterConfig::default()
        };
        let log = run_episode(&stream, &ws.ann, &budgets, &cfg).unwrap().log;
        let est = ws.estimates(test).unwrap();
        let opt = offline_optima(test, &est, &budgets).unwrap();
        let direct = compute_metrics(&log, opt.c_hat_opt.value);
        let row = report.rows[0].metrics.as_ref().unwrap();
        assert_eq!(row.performance, direct.performance);
        assert_eq!(row.cost, direct.cost);
        assert_eq!(row.throughput, direct.throughput as f64);
        assert_eq!(row.relative_performance, direct.relative_performance);
    }

    #[test]
    fn failures_are_isolated() {
        let ws = workspace();
        let plan = ExperimentPlan {
            algorithms: vec![Algorithm::Ours, Algorithm::Baseline(BaselineKind::ExternalPerf)],
            budget_factors: vec![1.0],
            seeds: vec![0],
            ..ExperimentPlan::default()
        };
        let report = run_plan(&ws, &plan).unwrap();
        let ext = report.rows.iter().find(|r| r.algorithm == "external_perf").unwrap();
        assert!(ext.error.is_some() && ext.metrics.is_none());
        let ours = report.rows.iter().find(|r| r.algorithm == "ours").unwrap();
        assert!(ours.metrics.is_some());
        assert_eq!(report.rows.len(), 4);
    }

    #[test]
    fn invalid_plans_rejected() {
        let ws = workspace();
        let bad = ExperimentPlan {
            seeds: vec![],
            ..ExperimentPlan::default()
        };
        assert!(run_plan(&ws, &bad).is_err());
        let bad = ExperimentPlan {
            volumes: vec![10_000],
            ..ExperimentPlan::default()
        };
        assert!(run_plan(&ws, &bad).is_err());
    }
}
