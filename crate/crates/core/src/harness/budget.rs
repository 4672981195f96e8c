use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BudgetVector, QueryRecord};

/// Per-model averages over the historical split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalStats {
    pub mean_performance: Vec<f64>,
    pub mean_cost: Vec<f64>,
}

impl HistoricalStats {
    pub fn from_records(records: &[QueryRecord]) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let m = first.scores.len();
        let mut perf = vec![0.0; m];
        let mut cost = vec![0.0; m];
        for r in records {
            for i in 0..m {
                perf[i] += r.scores[i];
                cost[i] += r.costs[i];
            }
        }
        let n = records.len() as f64;
        Ok(Self {
            mean_performance: perf.into_iter().map(|v| v / n).collect(),
            mean_cost: cost.into_iter().map(|v| v / n).collect(),
        })
    }

    pub fn num_models(&self) -> usize {
        self.mean_cost.len()
    }

    /// Mean performance over mean cost per model.
    pub fn cost_efficiency(&self) -> Result<Vec<f64>> {
        self.mean_performance
            .iter()
            .zip(&self.mean_cost)
            .enumerate()
            .map(|(i, (p, c))| {
                if *c > 0.0 {
                    Ok(p / c)
                } else {
                    Err(Error::config("split", format!("model {i} has zero mean cost")))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    CostEfficiencySqrt,
    Uniform,
    Random,
    /// 80% of the budget over the `h` least cost-efficient models.
    Extreme(usize),
    CostBasedSqrt,
    PerformanceBased,
}

impl SplitStrategy {
    pub fn validate(self, m: usize) -> Result<()> {
        match self {
            SplitStrategy::Extreme(h) if h == 0 || h > m => {
                Err(Error::config("split", format!("extreme needs 1 <= h <= {m}, got {h}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitStrategy::CostEfficiencySqrt => f.write_str("cost_efficiency_sqrt"),
            SplitStrategy::Uniform => f.write_str("uniform"),
            SplitStrategy::Random => f.write_str("random"),
            SplitStrategy::Extreme(h) => write!(f, "extreme_{h}"),
            SplitStrategy::CostBasedSqrt => f.write_str("cost_based_sqrt"),
            SplitStrategy::PerformanceBased => f.write_str("performance_based"),
        }
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cost_efficiency_sqrt" => SplitStrategy::CostEfficiencySqrt,
            "uniform" => SplitStrategy::Uniform,
            "random" => SplitStrategy::Random,
            "cost_based_sqrt" => SplitStrategy::CostBasedSqrt,
            "performance_based" => SplitStrategy::PerformanceBased,
            other => {
                let h = other
                    .strip_prefix("extreme_")
                    .or_else(|| other.strip_prefix("extreme:"))
                    .and_then(|h| h.parse().ok())
                    .ok_or_else(|| Error::config("split", format!("unknown split strategy '{other}'")))?;
                SplitStrategy::Extreme(h)
            }
        })
    }
}

/// Divides `total` across models. `seed` only matters for the random split.
pub fn split_budget(total: f64, strategy: SplitStrategy, stats: &HistoricalStats, seed: u64) -> Result<BudgetVector> {
    let m = stats.num_models();
    if m == 0 {
        return Err(Error::config("split", "no models"));
    }
    if !(total.is_finite() && total >= 0.0) {
        return Err(Error::config("budget", "total must be finite and nonnegative"));
    }
    strategy.validate(m)?;
    let weights: Vec<f64> = match strategy {
        SplitStrategy::CostEfficiencySqrt => stats.cost_efficiency()?.into_iter().map(f64::sqrt).collect(),
        SplitStrategy::CostBasedSqrt => {
            stats.cost_efficiency()?;
            stats.mean_cost.iter().map(|c| (1.0 / c).sqrt()).collect()
        }
        SplitStrategy::PerformanceBased => stats.mean_performance.clone(),
        SplitStrategy::Uniform => vec![1.0; m],
        SplitStrategy::Random => {
            // normalized unit exponentials are a flat Dirichlet draw
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..m).map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>()
        }
        SplitStrategy::Extreme(h) => {
            let eff = stats.cost_efficiency()?;
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| eff[a].total_cmp(&eff[b]).then(a.cmp(&b)));
            let mut w = vec![0.0; m];
            for (rank, &i) in order.iter().enumerate() {
                w[i] = if rank < h { 0.8 / h as f64 } else { 0.2 / (m - h) as f64 };
            }
            w
        }
    };
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::config("split", format!("{strategy} produced no usable weights")));
    }
    BudgetVector::new(weights.iter().map(|w| total * w / sum).collect())
}

/// `min_i Σ_j g_ij`: what the cheapest single model would spend on the stream.
pub fn base_budget(queries: &[QueryRecord]) -> f64 {
    let Some(first) = queries.first() else {
        return 0.0;
    };
    let mut sums = vec![0.0; first.costs.len()];
    for q in queries {
        for (s, c) in sums.iter_mut().zip(&q.costs) {
            *s += c;
        }
    }
    sums.into_iter().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(perf: Vec<f64>, cost: Vec<f64>) -> HistoricalStats {
        HistoricalStats {
            mean_performance: perf,
            mean_cost: cost,
        }
    }

    #[test]
    fn sqrt_efficiency_split() {
        let b = split_budget(100.0, SplitStrategy::CostEfficiencySqrt, &stats(vec![4.0, 1.0], vec![1.0, 1.0]), 0).unwrap();
        assert!((b.per_model[0] - 200.0 / 3.0).abs() < 1e-12);
        assert!((b.per_model[1] - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_split() {
        let b = split_budget(100.0, SplitStrategy::Uniform, &stats(vec![1.0; 4], vec![1.0; 4]), 0).unwrap();
        assert_eq!(b.per_model, vec![25.0; 4]);
    }

    #[test]
    fn extreme_split() {
        let s = stats(vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 4.0]);
        let b = split_budget(100.0, SplitStrategy::Extreme(1), &s, 0).unwrap();
        for (got, want) in b.per_model.iter().zip([10.0, 10.0, 80.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(split_budget(100.0, SplitStrategy::Extreme(4), &s, 0).is_err());
        let all = split_budget(90.0, SplitStrategy::Extreme(3), &s, 0).unwrap();
        assert!(all.per_model.iter().all(|b| (b - 30.0).abs() < 1e-12));
    }

    #[test]
    fn cost_strategies_reject_free_models() {
        let s = stats(vec![1.0, 1.0], vec![0.0, 1.0]);
        assert!(split_budget(1.0, SplitStrategy::CostBasedSqrt, &s, 0).is_err());
        assert!(split_budget(1.0, SplitStrategy::CostEfficiencySqrt, &s, 0).is_err());
        assert!(split_budget(1.0, SplitStrategy::Uniform, &s, 0).is_ok());
    }

    #[test]
    fn random_split_depends_on_seed() {
        let s = stats(vec![1.0; 3], vec![1.0; 3]);
        let a = split_budget(10.0, SplitStrategy::Random, &s, 1).unwrap();
        assert_eq!(a, split_budget(10.0, SplitStrategy::Random, &s, 1).unwrap());
        assert_ne!(a, split_budget(10.0, SplitStrategy::Random, &s, 2).unwrap());
        assert!((a.total - 10.0).abs() < 1e-12);
    }

    #[test]
    fn base_budget_is_cheapest_column() {
        let q = |c: Vec<f64>| QueryRecord::new("q", vec![0.0], vec![0.0; c.len()], c);
        assert_eq!(base_budget(&[q(vec![4.0, 3.0]), q(vec![6.0, 4.0])]), 7.0);
        assert_eq!(base_budget(&[q(vec![2.5]), q(vec![1.5])]), 4.0);
        assert_eq!(base_budget(&[]), 0.0);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            SplitStrategy::CostEfficiencySqrt,
            SplitStrategy::Uniform,
            SplitStrategy::Random,
            SplitStrategy::Extreme(2),
            SplitStrategy::CostBasedSqrt,
            SplitStrategy::PerformanceBased,
        ] {
            assert_eq!(s.to_string().parse::<SplitStrategy>().unwrap(), s);
        }
    }
}
