//! The two-stage online router: random routing over an observed prefix,
//! weight learning, then scored routing with a waiting queue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{FeatureEstimate, FeatureSource};
use crate::dual::{learn_weights, score_models, DualWeights, LearnedWeights, LearnerConfig, ObservedBatch};
use crate::error::{Error, Result};
use crate::metrics::{Decision, EpisodeLog, Stage};
use crate::types::{BudgetVector, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionPolicy {
    /// Run iff the true cost fits the remaining budget.
    #[default]
    ActualCost,
    /// Run iff the estimated cost fits; the true cost is charged afterwards
    /// and the remaining budget is clamped at zero.
    EstimatedCost,
}

impl std::str::FromStr for AdmissionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actual_cost" | "actual" => Ok(Self::ActualCost),
            "estimated_cost" | "estimated" => Ok(Self::EstimatedCost),
            other => Err(Error::config("admission", format!("unknown policy '{other}'"))),
        }
    }
}

/// Budget bookkeeping shared by the router and every baseline.
#[derive(Debug, Clone)]
pub struct BudgetLedger {
    policy: AdmissionPolicy,
    budgets: Vec<f64>,
    charged: Vec<f64>,
    remaining: Vec<f64>,
}

impl BudgetLedger {
    pub fn new(budgets: &BudgetVector, policy: AdmissionPolicy) -> Self {
        Self {
            policy,
            budgets: budgets.per_model.clone(),
            charged: vec![0.0; budgets.len()],
            remaining: budgets.per_model.clone(),
        }
    }

    pub fn policy(&self) -> AdmissionPolicy {
        self.policy
    }

    pub fn remaining(&self) -> &[f64] {
        &self.remaining
    }

    pub fn charged(&self) -> &[f64] {
        &self.charged
    }

    /// Whether model `i` accepts a query with the given true and estimated
    /// cost under the active policy.
    pub fn admits(&self, i: usize, true_cost: f64, estimated_cost: f64) -> bool {
        match self.policy {
            // comparing the running charge keeps `charged ≤ B` exact in floating point
            AdmissionPolicy::ActualCost => self.charged[i] + true_cost <= self.budgets[i],
            AdmissionPolicy::EstimatedCost => estimated_cost <= self.remaining[i],
        }
    }

    fn charge(&mut self, i: usize, true_cost: f64) {
        self.charged[i] += true_cost;
        self.remaining[i] = match self.policy {
            AdmissionPolicy::ActualCost => self.budgets[i] - self.charged[i],
            AdmissionPolicy::EstimatedCost => (self.remaining[i] - true_cost).max(0.0),
        };
    }

    /// Tries to run `query` on model `i`; records the decision either way.
    pub fn dispatch(
        &mut self,
        log: &mut EpisodeLog,
        query: &QueryRecord,
        stage: Stage,
        i: usize,
        estimated_cost: f64,
    ) -> bool {
        let cost = query.costs[i];
        if self.admits(i, cost, estimated_cost) {
            self.charge(i, cost);
            log.decisions.push(Decision {
                query_id: query.query_id.clone(),
                stage,
                model: Some(i),
                executed: true,
                charged_cost: cost,
                earned_score: query.scores[i],
            });
            true
        } else {
            log.decisions.push(Decision::queued(query.query_id.clone(), stage, Some(i)));
            false
        }
    }

    pub fn close(&self, log: &mut EpisodeLog) {
        log.header.remaining.clone_from(&self.remaining);
    }
}

/// Largest true score available to any query in `stream`.
pub fn stream_s_max(stream: &[QueryRecord]) -> f64 {
    stream.iter().map(QueryRecord::best_score).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub epsilon: f64,
    pub admission: AdmissionPolicy,
    /// Seed for the observation-stage draws.
    pub seed: u64,
    pub learner: LearnerConfig,
    /// Clamp the per-query dual term at zero while learning.
    pub clamp_zero: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.025,
            admission: AdmissionPolicy::ActualCost,
            seed: 7,
            learner: LearnerConfig::default(),
            clamp_zero: false,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("epsilon", "must lie in (0, 1)"));
        }
        self.learner.validate()
    }

    /// `ceil(ε · n)`, the size of the observed prefix.
    pub fn observed_len(&self, n: usize) -> usize {
        ((self.epsilon * n as f64).ceil() as usize).min(n)
    }
}

/// What the router did, beyond the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub log: EpisodeLog,
    pub learned: LearnedWeights,
    pub observed: usize,
}

pub const ALGORITHM_NAME: &str = "ours";

/// Runs both stages over `stream` in arrival order.
pub fn run_episode(
    stream: &[QueryRecord],
    features: &dyn FeatureSource,
    budgets: &BudgetVector,
    cfg: &RouterConfig,
) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    let m = budgets.len();
    let observed = cfg.observed_len(stream.len());
    if observed == 0 {
        return Err(Error::config("epsilon", "observation stage would be empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ledger = BudgetLedger::new(budgets, cfg.admission);
    let mut log = EpisodeLog::new(ALGORITHM_NAME, budgets.per_model.clone(), stream_s_max(stream));
    log.decisions.reserve(stream.len());

    let mut batch: Vec<(String, FeatureEstimate)> = Vec::with_capacity(observed);
    for q in &stream[..observed] {
        let f = features.estimate(q)?;
        check_width(&f, m, &q.query_id)?;
        let w = rng.random_range(0..=m);
        if w == 0 {
            log.decisions.push(Decision::queued(q.query_id.clone(), Stage::Observe, None));
        } else {
            ledger.dispatch(&mut log, q, Stage::Observe, w - 1, f.costs[w - 1]);
        }
        batch.push((q.query_id.clone(), f));
    }

    let batch = ObservedBatch::new(batch, cfg.epsilon, budgets.clone())?.with_clamp(cfg.clamp_zero);
    let learned = learn_weights(&batch, &cfg.learner)?;
    let weights = learned.weights();
    route_scored(&stream[observed..], features, &weights, &mut ledger, &mut log)?;
    ledger.close(&mut log);
    Ok(EpisodeOutcome {
        log,
        learned,
        observed,
    })
}

/// Second-stage routing with fixed weights.
pub fn route_scored(
    stream: &[QueryRecord],
    features: &dyn FeatureSource,
    weights: &DualWeights,
    ledger: &mut BudgetLedger,
    log: &mut EpisodeLog,
) -> Result<()> {
    for q in stream {
        let f = features.estimate(q)?;
        check_width(&f, weights.gamma.len(), &q.query_id)?;
        let (_, i) = score_models(&f, weights);
        ledger.dispatch(log, q, Stage::Route, i, f.costs[i]);
    }
    Ok(())
}

pub(crate) fn check_width(f: &FeatureEstimate, m: usize, query_id: &str) -> Result<()> {
    if f.scores.len() != m || f.costs.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: f.scores.len(),
            context: format!("feature estimate for query {query_id}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::ExactEstimator;

    fn stream(n: usize, m: usize) -> Vec<QueryRecord> {
        (0..n)
            .map(|j| {
                let x = j as f64;
                QueryRecord::new(
                    format!("q{j}"),
                    vec![x.sin(), x.cos()],
                    (0..m).map(|i| 0.3 + 0.1 * ((j + i) % 5) as f64).collect(),
                    (0..m).map(|i| 0.01 * (1 + (j * (i + 1)) % 7) as f64).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn single_model_with_ample_budget_runs_everything_routed() {
        let hist = stream(50, 1);
        let test = stream(200, 1);
        let src = ExactEstimator {
            records: &hist,
            k: 3,
            distance: Default::default(),
        };
        let total: f64 = test.iter().map(|q| q.costs[0]).sum();
        let budgets = BudgetVector::new(vec![total]).unwrap();
        let out = run_episode(&test, &src, &budgets, &RouterConfig::default()).unwrap();
        assert_eq!(out.log.decisions.len(), 200);
        let routed: f64 = out
            .log
            .decisions
            .iter()
            .zip(&test)
            .filter(|(d, _)| d.model.is_some())
            .map(|(_, q)| q.scores[0])
            .sum();
        assert!(out.log.decisions.iter().all(|d| d.model.is_none() || d.executed));
        let perf: f64 = out.log.decisions.iter().map(|d| d.earned_score).sum();
        assert_eq!(perf, routed);
    }

    #[test]
    fn zero_budget_executes_nothing() {
        let hist = stream(30, 3);
        let test = stream(100, 3);
        let src = ExactEstimator {
            records: &hist,
            k: 5,
            distance: Default::default(),
        };
        let budgets = BudgetVector::new(vec![0.0; 3]).unwrap();
        let out = run_episode(&test, &src, &budgets, &RouterConfig::default()).unwrap();
        assert!(out.log.decisions.iter().all(|d| !d.executed && d.charged_cost == 0.0));
    }

    #[test]
    fn observed_prefix_length() {
        let cfg = RouterConfig::default();
        assert_eq!(cfg.observed_len(5000), 125);
        assert_eq!(cfg.observed_len(41), 2);
        assert_eq!(cfg.observed_len(1), 1);
        let hist = stream(10, 2);
        let src = ExactEstimator {
            records: &hist,
            k: 1,
            distance: Default::default(),
        };
        let budgets = BudgetVector::new(vec![1.0; 2]).unwrap();
        assert!(run_episode(&[], &src, &budgets, &cfg).is_err());
    }

    #[test]
    fn ledger_policies() {
        let budgets = BudgetVector::new(vec![1.0]).unwrap();
        let mut actual = BudgetLedger::new(&budgets, AdmissionPolicy::ActualCost);
        let mut log = EpisodeLog::new("t", vec![1.0], 1.0);
        let q = QueryRecord::new("a", vec![0.0], vec![1.0], vec![0.7]);
        assert!(actual.dispatch(&mut log, &q, Stage::Route, 0, 0.1));
        assert!(!actual.dispatch(&mut log, &q, Stage::Route, 0, 0.1));
        assert!((actual.remaining()[0] - 0.3).abs() < 1e-15);

        let mut est = BudgetLedger::new(&budgets, AdmissionPolicy::EstimatedCost);
        assert!(est.dispatch(&mut log, &q, Stage::Route, 0, 0.1));
        assert!(est.dispatch(&mut log, &q, Stage::Route, 0, 0.1));
        assert_eq!(est.remaining()[0], 0.0);
        assert!((est.charged()[0] - 1.4).abs() < 1e-15);
        assert!(!est.dispatch(&mut log, &q, Stage::Route, 0, 0.1));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("actual_cost".parse::<AdmissionPolicy>().unwrap(), AdmissionPolicy::ActualCost);
        assert_eq!("estimated_cost".parse::<AdmissionPolicy>().unwrap(), AdmissionPolicy::EstimatedCost);
        assert!("maybe".parse::<AdmissionPolicy>().is_err());
    }
}
