//! Nearest-neighbor retrieval over historical embeddings and the
//! neighbor-mean feature estimator.

mod exact;
mod hnsw;
mod io;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{HistoricalRecord, QueryRecord};

pub use exact::exact_knn;
pub use hnsw::HnswIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; zero vectors are treated as orthogonal to everything.
    Cosine,
}

impl Distance {
    /// Monotone surrogate used for ranking: squared L2 or cosine distance.
    #[inline]
    pub(crate) fn surrogate(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Distance::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na.sqrt() * nb.sqrt())
                }
            }
        }
    }

    /// Converts a surrogate value into the reported distance.
    #[inline]
    pub(crate) fn finish(self, surrogate: f64) -> f64 {
        match self {
            Distance::Euclidean => surrogate.sqrt(),
            Distance::Cosine => surrogate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Neighbors averaged per estimate (`|R_j|`).
    pub k_neighbors: usize,
    /// Out-degree on the upper layers; layer 0 allows twice as many.
    pub graph_degree: usize,
    pub build_beam: usize,
    pub search_beam: usize,
    pub distance: Distance,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            graph_degree: 16,
            build_beam: 100,
            search_beam: 64,
            distance: Distance::Euclidean,
            seed: 0x5eed,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::config("k_neighbors", "must be at least 1"));
        }
        if self.search_beam < self.k_neighbors {
            return Err(Error::config("search_beam", "must be at least k_neighbors"));
        }
        if self.graph_degree < 2 {
            return Err(Error::config("graph_degree", "must be at least 2"));
        }
        if self.build_beam == 0 {
            return Err(Error::config("build_beam", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub record_id: usize,
    pub distance: f64,
}

/// Neighbors ordered by `(distance, record_id)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
    /// Set when the requested `k` exceeded the dataset size and was clamped.
    pub clamped: bool,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.record_id).collect()
    }
}

/// Total order on (surrogate distance, id) used by every search path.
#[inline]
pub(crate) fn cmp_candidates(a: (f64, u32), b: (f64, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Per-model estimates `d̂_·j`, `ĝ_·j` for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEstimate {
    pub scores: Vec<f64>,
    pub costs: Vec<f64>,
    pub neighbor_ids: Vec<usize>,
}

impl FeatureEstimate {
    /// Arithmetic mean of the neighbors' true score and cost vectors.
    pub fn from_neighbors(records: &[HistoricalRecord], neighbors: &NeighborSet) -> Self {
        let m = records.first().map(|r| r.scores.len()).unwrap_or(0);
        let mut scores = vec![0.0; m];
        let mut costs = vec![0.0; m];
        for n in &neighbors.neighbors {
            let r = &records[n.record_id];
            for i in 0..m {
                scores[i] += r.scores[i];
                costs[i] += r.costs[i];
            }
        }
        let k = neighbors.len().max(1) as f64;
        scores.iter_mut().for_each(|v| *v /= k);
        costs.iter_mut().for_each(|v| *v /= k);
        Self {
            scores,
            costs,
            neighbor_ids: neighbors.ids(),
        }
    }

    pub fn num_models(&self) -> usize {
        self.scores.len()
    }
}

/// Anything that can produce a feature estimate for an incoming query.
pub trait FeatureSource: Sync {
    fn estimate(&self, query: &QueryRecord) -> Result<FeatureEstimate>;
}

/// Estimates features from approximate neighbors found by the graph index.
pub struct AnnEstimator<'a> {
    pub index: &'a HnswIndex,
    pub records: &'a [HistoricalRecord],
    pub k: usize,
}

impl<'a> AnnEstimator<'a> {
    pub fn new(index: &'a HnswIndex, records: &'a [HistoricalRecord], k: usize) -> Result<Self> {
        if index.len() != records.len() {
            return Err(Error::DimensionMismatch {
                expected: records.len(),
                found: index.len(),
                context: "index size vs historical records".into(),
            });
        }
        Ok(Self { index, records, k })
    }
}

impl FeatureSource for AnnEstimator<'_> {
    fn estimate(&self, query: &QueryRecord) -> Result<FeatureEstimate> {
        let neighbors = self.index.search(&query.embedding, self.k)?;
        Ok(FeatureEstimate::from_neighbors(self.records, &neighbors))
    }
}

/// Estimates features from exact neighbors (linear scan).
pub struct ExactEstimator<'a> {
    pub records: &'a [HistoricalRecord],
    pub k: usize,
    pub distance: Distance,
}

impl FeatureSource for ExactEstimator<'_> {
    fn estimate(&self, query: &QueryRecord) -> Result<FeatureEstimate> {
        let neighbors = exact_knn(self.records, &query.embedding, self.k, self.distance)?;
        Ok(FeatureEstimate::from_neighbors(self.records, &neighbors))
    }
}

/// Estimates computed once per query and looked up by position in the stream
/// they were computed for (keyed by `query_id`).
pub struct CachedFeatures {
    by_id: std::collections::HashMap<String, FeatureEstimate>,
}

impl CachedFeatures {
    pub fn build(source: &dyn FeatureSource, queries: &[QueryRecord]) -> Result<Self> {
        use rayon::prelude::*;
        let estimates: Vec<(String, FeatureEstimate)> = queries
            .par_iter()
            .map(|q| source.estimate(q).map(|e| (q.query_id.clone(), e)))
            .collect::<Result<_>>()?;
        Ok(Self {
            by_id: estimates.into_iter().collect(),
        })
    }

    pub fn get(&self, query_id: &str) -> Option<&FeatureEstimate> {
        self.by_id.get(query_id)
    }
}

impl FeatureSource for CachedFeatures {
    fn estimate(&self, query: &QueryRecord) -> Result<FeatureEstimate> {
        self.by_id
            .get(&query.query_id)
            .cloned()
            .ok_or_else(|| Error::MissingPrediction(query.query_id.clone()))
    }
}

/// Convenience wrapper: features for `embedding` via the index.
pub fn estimate_features(
    index: &HnswIndex,
    records: &[HistoricalRecord],
    embedding: &[f64],
    k: usize,
) -> Result<FeatureEstimate> {
    let neighbors = index.search(embedding, k)?;
    Ok(FeatureEstimate::from_neighbors(records, &neighbors))
}

/// Fraction of `truth` ids present in `found`.
pub fn recall(found: &NeighborSet, truth: &NeighborSet) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth
        .neighbors
        .iter()
        .filter(|t| found.neighbors.iter().any(|f| f.record_id == t.record_id))
        .count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, emb: Vec<f64>, d: Vec<f64>, g: Vec<f64>) -> HistoricalRecord {
        HistoricalRecord::new(format!("h{id}"), emb, d, g)
    }

    #[test]
    fn mean_of_neighbors() {
        let records = vec![
            rec(0, vec![0.0], vec![0.2, 1.0], vec![1.0, 3.0]),
            rec(1, vec![1.0], vec![0.4, 0.0], vec![2.0, 3.0]),
            rec(2, vec![2.0], vec![0.6, 0.5], vec![3.0, 3.0]),
        ];
        let ns = exact_knn(&records, &[1.0], 3, Distance::Euclidean).unwrap();
        let est = FeatureEstimate::from_neighbors(&records, &ns);
        assert!((est.scores[0] - 0.4).abs() < 1e-15);
        assert!((est.costs[0] - 2.0).abs() < 1e-15);
        assert_eq!(est.costs[1], 3.0);
    }

    #[test]
    fn single_neighbor_identity() {
        let records: Vec<_> = (0..20)
            .map(|i| rec(i, vec![i as f64, (i * i) as f64], vec![i as f64 / 20.0], vec![0.5 + i as f64]))
            .collect();
        let index = HnswIndex::build(&records, &IndexConfig::default()).unwrap();
        for r in &records {
            let est = estimate_features(&index, &records, &r.embedding, 1).unwrap();
            assert_eq!(est.scores, r.scores);
            assert_eq!(est.costs, r.costs);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = IndexConfig::default();
        c.validate().unwrap();
        c.k_neighbors = 0;
        assert!(c.validate().is_err());
        let c = IndexConfig {
            search_beam: 2,
            ..IndexConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn cosine_distance() {
        let d = Distance::Cosine;
        assert!((d.surrogate(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!(d.surrogate(&[1.0, 1.0], &[2.0, 2.0]).abs() < 1e-15);
        assert_eq!(d.surrogate(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }
}
