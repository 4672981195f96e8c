//! Layered navigable small-world graph (HNSW-style) over historical embeddings.
//!
//! Nodes are inserted in record order. Each node draws a top layer from a
//! geometric distribution; search descends greedily through the sparse upper
//! layers and runs a beam search on layer 0, which holds every node.
//!
//! After construction, layer 0 is patched so that every node is reachable
//! from the entry point. Together with seeding the layer-0 beam from the
//! entry point, a beam as wide as the dataset visits every node and the
//! result matches an exhaustive scan exactly.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::HistoricalRecord;

use super::{cmp_candidates, IndexConfig, Neighbor, NeighborSet};

const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Cand(f64, u32);

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_candidates((self.0, self.1), (other.0, other.1))
    }
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Marks `id`, returning `true` if it was not yet visited.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    pub(super) config: IndexConfig,
    pub(super) dim: usize,
    pub(super) vectors: Vec<f64>,
    /// `links[node][layer]` for layers `0..=level(node)`.
    pub(super) links: Vec<Vec<Vec<u32>>>,
    pub(super) entry: u32,
    pub(super) max_level: usize,
}

impl HnswIndex {
    pub fn build(records: &[HistoricalRecord], config: &IndexConfig) -> Result<Self> {
        let embeddings: Vec<&[f64]> = records.iter().map(|r| r.embedding.as_slice()).collect();
        Self::build_from_vectors(&embeddings, config)
    }

    pub fn build_from_vectors(embeddings: &[&[f64]], config: &IndexConfig) -> Result<Self> {
        config.validate()?;
        let Some(first) = embeddings.first() else {
            return Err(Error::EmptyDataset);
        };
        let dim = first.len();
        let mut vectors = Vec::with_capacity(embeddings.len() * dim);
        for (i, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.len(),
                    context: format!("embedding of historical record {i}"),
                });
            }
            vectors.extend_from_slice(e);
        }
        let n = embeddings.len();
        let mut index = Self {
            config: config.clone(),
            dim,
            vectors,
            links: Vec::with_capacity(n),
            entry: 0,
            max_level: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let level_mult = 1.0 / (config.graph_degree as f64).ln();
        let mut visited = Visited::new(n);
        for node in 0..n {
            let u: f64 = rng.random::<f64>();
            let level = ((-(1.0 - u).ln()) * level_mult).floor() as usize;
            index.insert(node as u32, level.min(MAX_LEVEL), &mut visited);
        }
        index.repair_connectivity(&mut visited);
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    #[inline]
    fn vector(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    #[inline]
    fn dist(&self, q: &[f64], id: u32) -> f64 {
        self.config.distance.surrogate(q, self.vector(id))
    }

    fn layer_capacity(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.config.graph_degree
        } else {
            self.config.graph_degree
        }
    }

    fn insert(&mut self, node: u32, level: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = self.vector(node).to_vec();
        let mut ep = Cand(self.dist(&q, self.entry), self.entry);
        for layer in (level + 1..=self.max_level).rev() {
            ep = self.greedy_closest(&q, ep, layer);
        }
        let mut entries = vec![ep];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &entries, self.config.build_beam, layer, visited);
            let chosen = self.select_neighbors(&found, self.config.graph_degree);
            self.links[node as usize][layer] = chosen.iter().map(|c| c.1).collect();
            let cap = self.layer_capacity(layer);
            for c in &chosen {
                let other = c.1 as usize;
                self.links[other][layer].push(node);
                if self.links[other][layer].len() > cap {
                    self.shrink(other as u32, layer, cap);
                }
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    fn shrink(&mut self, node: u32, layer: usize, cap: usize) {
        let base = self.vector(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node as usize][layer]
            .iter()
            .map(|&id| Cand(self.dist(&base, id), id))
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, cap);
        self.links[node as usize][layer] = kept.iter().map(|c| c.1).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every already-kept neighbor, then top up with the pruned ones.
    /// `sorted` must be ascending.
    fn select_neighbors(&self, sorted: &[Cand], limit: usize) -> Vec<Cand> {
        let mut kept: Vec<Cand> = Vec::with_capacity(limit);
        let mut pruned = Vec::new();
        for &c in sorted {
            if kept.len() >= limit {
                break;
            }
            let cv = self.vector(c.1);
            let diverse = kept
                .iter()
                .all(|k| self.config.distance.surrogate(cv, self.vector(k.1)) > c.0);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= limit {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy_closest(&self, q: &[f64], mut best: Cand, layer: usize) -> Cand {
        loop {
            let mut improved = false;
            for &nb in &self.links[best.1 as usize][layer] {
                let c = Cand(self.dist(q, nb), nb);
                if c < best {
                    best = c;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search restricted to one layer; returns up to `ef` nodes ascending.
    fn search_layer(&self, q: &[f64], entries: &[Cand], ef: usize, layer: usize, visited: &mut Visited) -> Vec<Cand> {
        visited.reset();
        let mut candidates: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut results: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.1) {
                candidates.push(Reverse(e));
                results.push(e);
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if results.len() >= ef {
                if let Some(worst) = results.peek() {
                    if c > *worst {
                        break;
                    }
                }
            }
            for &nb in &self.links[c.1 as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand(self.dist(q, nb), nb);
                let admit = results.len() < ef || results.peek().is_some_and(|w| cand < *w);
                if admit {
                    candidates.push(Reverse(cand));
                    results.push(cand);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    fn repair_connectivity(&mut self, visited: &mut Visited) {
        let n = self.len();
        let mut reached = vec![false; n];
        let mut stack = vec![self.entry];
        reached[self.entry as usize] = true;
        self.flood(&mut reached, &mut stack);
        for u in 0..n as u32 {
            if reached[u as usize] {
                continue;
            }
            let q = self.vector(u).to_vec();
            let start = Cand(self.dist(&q, self.entry), self.entry);
            let found = self.search_layer(&q, &[start], self.config.build_beam, 0, visited);
            let anchor = found
                .iter()
                .find(|c| reached[c.1 as usize])
                .copied()
                .unwrap_or(start);
            self.links[anchor.1 as usize][0].push(u);
            if !self.links[u as usize][0].contains(&anchor.1) {
                self.links[u as usize][0].push(anchor.1);
            }
            reached[u as usize] = true;
            stack.push(u);
            self.flood(&mut reached, &mut stack);
        }
    }

    fn flood(&self, reached: &mut [bool], stack: &mut Vec<u32>) {
        while let Some(v) = stack.pop() {
            for &nb in &self.links[v as usize][0] {
                if !reached[nb as usize] {
                    reached[nb as usize] = true;
                    stack.push(nb);
                }
            }
        }
    }

    /// Approximate `k` nearest neighbors with beam `max(search_beam, k)`.
    pub fn search(&self, embedding: &[f64], k: usize) -> Result<NeighborSet> {
        self.search_with_beam(embedding, k, self.config.search_beam)
    }

    pub fn search_with_beam(&self, embedding: &[f64], k: usize, beam: usize) -> Result<NeighborSet> {
        if embedding.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embedding.len(),
                context: "query embedding".into(),
            });
        }
        let clamped = k > self.len();
        let k = k.min(self.len());
        let ef = beam.max(k);
        let entry = Cand(self.dist(embedding, self.entry), self.entry);
        let mut ep = entry;
        for layer in (1..=self.max_level).rev() {
            ep = self.greedy_closest(embedding, ep, layer);
        }
        let mut visited = Visited::new(self.len());
        let entries: Vec<Cand> = if ep.1 == entry.1 { vec![ep] } else { vec![ep, entry] };
        let found = self.search_layer(embedding, &entries, ef, 0, &mut visited);
        Ok(NeighborSet {
            neighbors: found
                .into_iter()
                .take(k)
                .map(|c| Neighbor {
                    record_id: c.1 as usize,
                    distance: self.config.distance.finish(c.0),
                })
                .collect(),
            clamped,
        })
    }

    /// Mean out-degree on layer 0, for diagnostics.
    pub fn mean_degree(&self) -> f64 {
        let total: usize = self.links.iter().map(|l| l[0].len()).sum();
        total as f64 / self.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::super::{exact_knn, recall, Distance};
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<HistoricalRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let e: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                HistoricalRecord::new(format!("r{i}"), e, vec![0.0], vec![0.0])
            })
            .collect()
    }

    #[test]
    fn singleton_index() {
        let recs = gaussian(1, 4, 1);
        let idx = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        let ns = idx.search(&[9.0, 9.0, 9.0, 9.0], 5).unwrap();
        assert_eq!(ns.ids(), vec![0]);
        assert!(ns.clamped);
    }

    #[test]
    fn self_match_first() {
        let recs = gaussian(500, 8, 2);
        let idx = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        for r in recs.iter().step_by(37) {
            let ns = idx.search(&r.embedding, 3).unwrap();
            assert_eq!(ns.neighbors[0].distance, 0.0);
            assert_eq!(recs[ns.neighbors[0].record_id].embedding, r.embedding);
        }
    }

    #[test]
    fn duplicates_are_retrievable() {
        let mut recs = gaussian(50, 3, 3);
        let dup = recs[10].embedding.clone();
        recs.push(HistoricalRecord::new("dup", dup.clone(), vec![0.0], vec![0.0]));
        let idx = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        let ns = idx.search(&dup, 2).unwrap();
        assert_eq!(ns.ids(), vec![10, 50]);
    }

    #[test]
    fn full_beam_equals_exact_sort() {
        let recs = gaussian(300, 6, 4);
        let idx = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        let probes = gaussian(10, 6, 5);
        for p in &probes {
            let approx = idx.search_with_beam(&p.embedding, recs.len(), recs.len()).unwrap();
            let exact = exact_knn(&recs, &p.embedding, recs.len(), Distance::Euclidean).unwrap();
            assert_eq!(approx, exact);
        }
    }

    #[test]
    fn far_query_still_returns_k() {
        let recs = gaussian(200, 4, 6);
        let idx = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        let ns = idx.search(&[1e6, -1e6, 1e6, 0.0], 5).unwrap();
        assert_eq!(ns.len(), 5);
    }

    #[test]
    fn deterministic_build() {
        let recs = gaussian(400, 5, 7);
        let a = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        let b = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        assert_eq!(a.links, b.links);
        assert_eq!(a.entry, b.entry);
    }

    #[test]
    fn good_recall_on_small_suite() {
        let recs = gaussian(2000, 16, 8);
        let idx = HnswIndex::build(&recs, &IndexConfig::default()).unwrap();
        let probes = gaussian(100, 16, 9);
        let mean: f64 = probes
            .iter()
            .map(|p| {
                let a = idx.search(&p.embedding, 5).unwrap();
                let e = exact_knn(&recs, &p.embedding, 5, Distance::Euclidean).unwrap();
                recall(&a, &e)
            })
            .sum::<f64>()
            / probes.len() as f64;
        assert!(mean >= 0.9, "recall {mean}");
    }

    #[test]
    fn mismatched_dimension_rejected() {
        let mut recs = gaussian(3, 2, 10);
        recs[1].embedding.push(1.0);
        assert!(HnswIndex::build(&recs, &IndexConfig::default()).is_err());
        assert!(HnswIndex::build(&[], &IndexConfig::default()).is_err());
    }
}
