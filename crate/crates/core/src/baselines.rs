//! Comparison strategies. They share the router's ledger, so admission and
//! queueing behave identically across every algorithm.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{FeatureEstimate, FeatureSource};
use crate::error::{Error, Result};
use crate::metrics::{Decision, EpisodeLog, Stage};
use crate::oracle::{solve_relaxed_lp, AllocationProblem, Integrality};
use crate::router::{check_width, stream_s_max, AdmissionPolicy, BudgetLedger};
use crate::types::{BudgetVector, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    GreedyPerf,
    GreedyCost,
    KnnPerf,
    KnnCost,
    BatchSplit,
    ExternalPerf,
    ExternalCost,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 8] = [
        BaselineKind::Random,
        BaselineKind::GreedyPerf,
        BaselineKind::GreedyCost,
        BaselineKind::KnnPerf,
        BaselineKind::KnnCost,
        BaselineKind::BatchSplit,
        BaselineKind::ExternalPerf,
        BaselineKind::ExternalCost,
    ];

    /// The kinds that need nothing beyond the historical data.
    pub const IN_REPO: [BaselineKind; 6] = [
        BaselineKind::Random,
        BaselineKind::GreedyPerf,
        BaselineKind::GreedyCost,
        BaselineKind::KnnPerf,
        BaselineKind::KnnCost,
        BaselineKind::BatchSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::GreedyPerf => "greedy_perf",
            BaselineKind::GreedyCost => "greedy_cost",
            BaselineKind::KnnPerf => "knn_perf",
            BaselineKind::KnnCost => "knn_cost",
            BaselineKind::BatchSplit => "batch_split",
            BaselineKind::ExternalPerf => "external_perf",
            BaselineKind::ExternalCost => "external_cost",
        }
    }

    pub fn is_external(self) -> bool {
        matches!(self, BaselineKind::ExternalPerf | BaselineKind::ExternalCost)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("algorithms", format!("unknown baseline '{s}'")))
    }
}

/// Per-query vectors produced by a model trained elsewhere.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub scores: Option<HashMap<String, Vec<f64>>>,
    pub costs: Option<HashMap<String, Vec<f64>>>,
}

/// Reads a CSV with header `query_id, v_0..v_{M-1}`.
pub fn load_prediction_file(path: &Path, m: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected: Vec<String> = std::iter::once("query_id".to_string())
        .chain((0..m).map(|i| format!("v_{i}")))
        .collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut out = HashMap::new();
    for (n, row) in reader.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if row.len() != m + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", m + 1, row.len()),
            });
        }
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        out.insert(row[0].to_string(), values);
    }
    Ok(out)
}

pub fn write_prediction_file(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let m = rows.first().map(|r| r.1.len()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let header: Vec<String> = std::iter::once("query_id".to_string())
        .chain((0..m).map(|i| format!("v_{i}")))
        .collect();
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for (id, v) in rows {
        let rec: Vec<String> = std::iter::once(id.clone()).chain(v.iter().map(f64::to_string)).collect();
        w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub admission: AdmissionPolicy,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            admission: AdmissionPolicy::ActualCost,
            seed: 11,
            batch_size: 256,
        }
    }
}

/// Feature sources a baseline may draw from.
pub struct BaselineInputs<'a> {
    /// Approximate-neighbor estimates.
    pub ann: &'a dyn FeatureSource,
    /// Exact-neighbor estimates.
    pub knn: &'a dyn FeatureSource,
    pub predictions: Option<&'a Predictions>,
}

/// Budget as the baseline believes it: `B_i` minus the estimated cost of
/// every query it has run on model `i`.
struct PredictedBudget(Vec<f64>);

impl PredictedBudget {
    fn headroom(&self, i: usize, est: f64) -> f64 {
        self.0[i] - est
    }

    fn record(&mut self, i: usize, est: f64) {
        self.0[i] -= est;
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn lookup<'a>(map: &'a Option<HashMap<String, Vec<f64>>>, kind: BaselineKind, id: &str, m: usize) -> Result<&'a [f64]> {
    let map = map
        .as_ref()
        .ok_or_else(|| Error::MissingPrediction(format!("{kind} needs a prediction file")))?;
    let v = map
        .get(id)
        .ok_or_else(|| Error::MissingPrediction(format!("no prediction for query {id}")))?;
    if v.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: v.len(),
            context: format!("prediction for query {id}"),
        });
    }
    Ok(v)
}

pub fn route_baseline(
    kind: BaselineKind,
    stream: &[QueryRecord],
    inputs: &BaselineInputs<'_>,
    budgets: &BudgetVector,
    cfg: &BaselineConfig,
) -> Result<EpisodeLog> {
    let m = budgets.len();
    if kind.is_external() && inputs.predictions.is_none() {
        return Err(Error::MissingPrediction(format!("{kind} needs a prediction file")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut ledger = BudgetLedger::new(budgets, cfg.admission);
    let mut log = EpisodeLog::new(kind.name(), budgets.per_model.clone(), stream_s_max(stream));
    log.decisions.reserve(stream.len());
    let mut believed = PredictedBudget(budgets.per_model.clone());

    if kind == BaselineKind::BatchSplit {
        for chunk in stream.chunks(cfg.batch_size) {
            route_batch(chunk, inputs.ann, m, &mut ledger, &mut believed, &mut log)?;
        }
        ledger.close(&mut log);
        return Ok(log);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for q in stream {
        let source = match kind {
            BaselineKind::KnnPerf | BaselineKind::KnnCost => inputs.knn,
            _ => inputs.ann,
        };
        let f = source.estimate(q)?;
        check_width(&f, m, &q.query_id)?;
        let predictions = inputs.predictions;
        let est_costs: &[f64] = match predictions.and_then(|p| p.costs.as_ref()) {
            Some(_) if kind.is_external() => lookup(&predictions.unwrap().costs, kind, &q.query_id, m)?,
            _ => &f.costs,
        };
        let i = match kind {
            BaselineKind::Random => rng.random_range(0..m),
            BaselineKind::GreedyPerf | BaselineKind::KnnPerf => argmax(f.scores.iter().copied()),
            BaselineKind::GreedyCost | BaselineKind::KnnCost | BaselineKind::ExternalCost => {
                argmax((0..m).map(|i| believed.headroom(i, est_costs[i])))
            }
            BaselineKind::ExternalPerf => {
                let scores = lookup(&predictions.unwrap().scores, kind, &q.query_id, m)?;
                argmax(scores.iter().copied())
            }
            BaselineKind::BatchSplit => unreachable!("handled above"),
        };
        let est = est_costs[i];
        if ledger.dispatch(&mut log, q, Stage::Route, i, est) {
            believed.record(i, est);
        }
    }
    ledger.close(&mut log);
    Ok(log)
}

/// Solves the batch LP on estimates against the believed remaining budget and
/// sends each query to its largest share; queries the LP leaves out wait.
fn route_batch(
    chunk: &[QueryRecord],
    source: &dyn FeatureSource,
    m: usize,
    ledger: &mut BudgetLedger,
    believed: &mut PredictedBudget,
    log: &mut EpisodeLog,
) -> Result<()> {
    let feats: Vec<FeatureEstimate> = chunk
        .iter()
        .map(|q| {
            let f = source.estimate(q)?;
            check_width(&f, m, &q.query_id)?;
            Ok(f)
        })
        .collect::<Result<_>>()?;
    let problem = AllocationProblem::new(
        feats.iter().map(|f| f.scores.clone()).collect(),
        feats.iter().map(|f| f.costs.clone()).collect(),
        believed.0.iter().map(|b| b.max(0.0)).collect(),
        Integrality::Fractional,
    );
    let solution = solve_relaxed_lp(&problem)?;
    for ((q, f), choice) in chunk.iter().zip(&feats).zip(solution.assignment()) {
        match choice {
            Some(i) => {
                if ledger.dispatch(log, q, Stage::Route, i, f.costs[i]) {
                    believed.record(i, f.costs[i]);
                }
            }
            None => log.decisions.push(Decision::queued(q.query_id.clone(), Stage::Route, None)),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::ExactEstimator;

    fn records(n: usize, m: usize, salt: usize) -> Vec<QueryRecord> {
        (0..n)
            .map(|j| {
                let x = (j * 7 + salt) as f64;
                QueryRecord::new(
                    format!("q{salt}_{j}"),
                    vec![x.sin(), (x * 0.3).cos()],
                    (0..m).map(|i| ((j + 3 * i) % 10) as f64 / 10.0).collect(),
                    (0..m).map(|i| 0.01 * (1 + (j + i) % 4) as f64 * (i + 1) as f64).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn single_model_collapses_every_kind() {
        let hist = records(40, 1, 1);
        let test = records(60, 1, 2);
        let src = ExactEstimator {
            records: &hist,
            k: 5,
            distance: Default::default(),
        };
        let inputs = BaselineInputs {
            ann: &src,
            knn: &src,
            predictions: None,
        };
        let budgets = BudgetVector::new(vec![0.5]).unwrap();
        let mut decisions = Vec::new();
        for kind in BaselineKind::IN_REPO {
            let log = route_baseline(kind, &test, &inputs, &budgets, &BaselineConfig::default()).unwrap();
            assert!(log.decisions.iter().all(|d| d.model.is_none_or(|i| i == 0)));
            assert!(log.budget_violations().is_empty());
            if kind != BaselineKind::BatchSplit {
                decisions.push(log.decisions);
            }
        }
        assert!(decisions.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn external_kinds_need_predictions() {
        let hist = records(10, 2, 1);
        let src = ExactEstimator {
            records: &hist,
            k: 1,
            distance: Default::default(),
        };
        let inputs = BaselineInputs {
            ann: &src,
            knn: &src,
            predictions: None,
        };
        let budgets = BudgetVector::new(vec![1.0; 2]).unwrap();
        let err = route_baseline(BaselineKind::ExternalPerf, &hist, &inputs, &budgets, &BaselineConfig::default());
        assert!(matches!(err, Err(Error::MissingPrediction(_))));
    }

    #[test]
    fn external_perf_follows_file() {
        let dir = tempfile::tempdir().unwrap();
        let hist = records(10, 2, 1);
        let test = records(5, 2, 3);
        let rows: Vec<(String, Vec<f64>)> = test.iter().map(|q| (q.query_id.clone(), vec![0.0, 1.0])).collect();
        let path = dir.path().join("pred.csv");
        write_prediction_file(&path, &rows).unwrap();
        let scores = load_prediction_file(&path, 2).unwrap();
        assert_eq!(scores.len(), 5);
        assert!(load_prediction_file(&path, 3).is_err());
        let preds = Predictions {
            scores: Some(scores),
            costs: None,
        };
        let src = ExactEstimator {
            records: &hist,
            k: 2,
            distance: Default::default(),
        };
        let inputs = BaselineInputs {
            ann: &src,
            knn: &src,
            predictions: Some(&preds),
        };
        let budgets = BudgetVector::new(vec![10.0; 2]).unwrap();
        let log = route_baseline(BaselineKind::ExternalPerf, &test, &inputs, &budgets, &BaselineConfig::default()).unwrap();
        assert!(log.decisions.iter().all(|d| d.model == Some(1) && d.executed));
    }

    #[test]
    fn cost_kind_prefers_most_headroom() {
        let hist = vec![QueryRecord::new("h", vec![0.0], vec![0.5, 0.5], vec![0.1, 0.1])];
        let test = vec![QueryRecord::new("t", vec![0.0], vec![0.5, 0.5], vec![0.1, 0.1])];
        let src = ExactEstimator {
            records: &hist,
            k: 1,
            distance: Default::default(),
        };
        let inputs = BaselineInputs {
            ann: &src,
            knn: &src,
            predictions: None,
        };
        let budgets = BudgetVector::new(vec![1.0, 3.0]).unwrap();
        let log = route_baseline(BaselineKind::GreedyCost, &test, &inputs, &budgets, &BaselineConfig::default()).unwrap();
        assert_eq!(log.decisions[0].model, Some(1));
    }

    #[test]
    fn names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("oracle".parse::<BaselineKind>().is_err());
    }
}
