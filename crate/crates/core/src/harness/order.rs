use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::QueryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRegime {
    /// Seeded uniform shuffles, this many per seed.
    Random(usize),
    /// Descending by the largest per-model cost, ties by query id.
    WorstCase,
}

impl OrderRegime {
    pub fn replicas(self) -> usize {
        match self {
            OrderRegime::Random(n) => n,
            OrderRegime::WorstCase => 1,
        }
    }
}

impl fmt::Display for OrderRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderRegime::Random(n) => write!(f, "random_{n}"),
            OrderRegime::WorstCase => f.write_str("worst_case"),
        }
    }
}

impl FromStr for OrderRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "worst_case" {
            return Ok(OrderRegime::WorstCase);
        }
        if s == "random" {
            return Ok(OrderRegime::Random(1));
        }
        s.strip_prefix("random_")
            .or_else(|| s.strip_prefix("random:"))
            .and_then(|n| n.parse().ok())
            .filter(|&n| n > 0)
            .map(OrderRegime::Random)
            .ok_or_else(|| Error::config("order", format!("unknown order regime '{s}'")))
    }
}

/// Arrival order under `regime`; `seed` drives the shuffle.
pub fn order_stream(queries: &[QueryRecord], regime: OrderRegime, seed: u64) -> Vec<QueryRecord> {
    let mut out = queries.to_vec();
    match regime {
        OrderRegime::Random(_) => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        OrderRegime::WorstCase => out.sort_by(|a, b| {
            b.max_cost()
                .total_cmp(&a.max_cost())
                .then_with(|| a.query_id.cmp(&b.query_id))
        }),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, cost: f64) -> QueryRecord {
        QueryRecord::new(id, vec![0.0], vec![0.0, 0.0], vec![cost, cost / 2.0])
    }

    #[test]
    fn worst_case_sorts_by_max_cost() {
        let qs = vec![q("a", 3.0), q("b", 1.0), q("c", 2.0)];
        let ids: Vec<_> = order_stream(&qs, OrderRegime::WorstCase, 0)
            .into_iter()
            .map(|q| q.query_id)
            .collect();
        assert_eq!(ids, ["a", "c", "b"]);
        let tied = vec![q("z", 1.0), q("y", 1.0)];
        assert_eq!(order_stream(&tied, OrderRegime::WorstCase, 0)[0].query_id, "y");
    }

    #[test]
    fn shuffle_is_seeded() {
        let qs: Vec<_> = (0..20).map(|i| q(&format!("q{i}"), i as f64)).collect();
        let a = order_stream(&qs, OrderRegime::Random(1), 5);
        assert_eq!(a, order_stream(&qs, OrderRegime::Random(1), 5));
        assert_ne!(a, order_stream(&qs, OrderRegime::Random(1), 6));
    }

    #[test]
    fn regime_names() {
        assert_eq!("random_100".parse::<OrderRegime>().unwrap(), OrderRegime::Random(100));
        assert_eq!("worst_case".parse::<OrderRegime>().unwrap(), OrderRegime::WorstCase);
        assert!("random_0".parse::<OrderRegime>().is_err());
        assert_eq!(OrderRegime::Random(3).to_string(), "random_3");
    }
}
