use crate::error::{Error, Result};
use crate::types::HistoricalRecord;

use super::{cmp_candidates, Distance, Neighbor, NeighborSet};

/// Exact k nearest neighbors by linear scan. Ties go to the lower record id;
/// `k > |D|` is clamped and flagged.
pub fn exact_knn(records: &[HistoricalRecord], embedding: &[f64], k: usize, distance: Distance) -> Result<NeighborSet> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = records[0].embedding.len();
    if embedding.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: embedding.len(),
            context: "query embedding".into(),
        });
    }
    let clamped = k > records.len();
    let k = k.min(records.len());
    let mut scored: Vec<(f64, u32)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (distance.surrogate(&r.embedding, embedding), i as u32))
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k, |a, b| cmp_candidates(*a, *b));
        scored.truncate(k);
    }
    scored.sort_by(|a, b| cmp_candidates(*a, *b));
    Ok(NeighborSet {
        neighbors: scored
            .into_iter()
            .map(|(s, id)| Neighbor {
                record_id: id as usize,
                distance: distance.finish(s),
            })
            .collect(),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(coords: &[[f64; 2]]) -> Vec<HistoricalRecord> {
        coords
            .iter()
            .enumerate()
            .map(|(i, c)| HistoricalRecord::new(format!("p{i}"), c.to_vec(), vec![0.0], vec![0.0]))
            .collect()
    }

    #[test]
    fn three_points_by_hand() {
        let recs = points(&[[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]]);
        let ns = exact_knn(&recs, &[2.0, 2.0], 1, Distance::Euclidean).unwrap();
        assert_eq!(ns.ids(), vec![2]);
        assert!((ns.neighbors[0].distance - 2f64.sqrt()).abs() < 1e-15);
        let all = exact_knn(&recs, &[2.0, 2.0], 3, Distance::Euclidean).unwrap();
        // distances: sqrt(8), sqrt(5), sqrt(2)
        assert_eq!(all.ids(), vec![2, 1, 0]);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let recs = points(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
        let ns = exact_knn(&recs, &[0.0, 0.0], 2, Distance::Euclidean).unwrap();
        assert_eq!(ns.ids(), vec![0, 1]);
    }

    #[test]
    fn oversized_k_is_clamped() {
        let recs = points(&[[0.0, 0.0], [1.0, 0.0]]);
        let ns = exact_knn(&recs, &[0.0, 0.0], 5, Distance::Euclidean).unwrap();
        assert!(ns.clamped);
        assert_eq!(ns.len(), 2);
        assert!(exact_knn(&recs, &[0.0], 1, Distance::Euclidean).is_err());
    }
}
