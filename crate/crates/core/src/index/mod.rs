//! Nearest-neighbor retrieval over embedding vectors, partitioned by endpoint.
//!
//! [`HnswIndex`] keeps one HNSW graph per endpoint namespace inside a single
//! artifact with a shared id space. [`FlatIndex`] stores the same data without
//! a graph and answers every query by exhaustive scan.

mod distance;
mod flat;
mod hnsw;
mod io;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::Endpoint;
use crate::codec::CodecError;
use crate::scalar::Real;

pub use distance::{cosine_distance, Distance};
pub use flat::FlatIndex;
pub use hnsw::HnswIndex;
pub use io::{index_to_bytes, load_index, save_index};

pub type PointId = u64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("point id {0} is already present")]
    DuplicateId(PointId),
    #[error("vector has {found} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no namespace for endpoint {0}")]
    UnknownEndpoint(Endpoint),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    /// Maximum degree on upper layers; layer 0 allows twice this.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub distance: Distance,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            m: 16,
            ef_construction: 200,
            ef_search: 200,
            distance: Distance::Cosine,
            seed: 1,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        let bad = |m: String| Err(IndexError::InvalidConfig(m));
        if self.m < 2 {
            return bad(format!("m = {} must be at least 2", self.m));
        }
        if self.ef_construction < self.m {
            return bad(format!(
                "ef_construction = {} must be at least m = {}",
                self.ef_construction, self.m
            ));
        }
        if self.ef_search == 0 {
            return bad("ef_search must be at least 1".into());
        }
        Ok(())
    }
}

/// One search hit. Lists are ordered by ascending distance, then id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<F> {
    pub id: PointId,
    pub distance: F,
}

impl<F: Real> Neighbor<F> {
    pub(crate) fn order(&self, other: &Self) -> Ordering {
        self.distance
            .partial_cmp(&other.distance)
            .unwrap_or(Ordering::Equal)
            .then(self.id.cmp(&other.id))
    }
}

/// Exact k-NN over `(id, vector)` rows by full scan.
pub(crate) fn scan<'a, F: Real>(
    metric: Distance,
    query: &[F],
    rows: impl Iterator<Item = (PointId, &'a [F])>,
    k: usize,
) -> Vec<Neighbor<F>> {
    let mut all: Vec<Neighbor<F>> = rows
        .map(|(id, v)| Neighbor {
            id,
            distance: metric.eval(query, v),
        })
        .collect();
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, Neighbor::order);
        all.truncate(k);
    }
    all.sort_by(Neighbor::order);
    all
}

/// Common surface of the graph index and the exhaustive index, used by the
/// benchmark harness.
pub trait NeighborIndex<F: Real> {
    fn insert(&mut self, endpoint: &Endpoint, vector: &[F], id: PointId) -> Result<(), IndexError>;
    fn query(&self, endpoint: &Endpoint, vector: &[F], k: usize) -> Result<Vec<Neighbor<F>>, IndexError>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        assert!(IndexConfig::default().validate().is_ok());
        for cfg in [
            IndexConfig { m: 1, ..Default::default() },
            IndexConfig { ef_construction: 8, m: 16, ..Default::default() },
            IndexConfig { ef_search: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn scan_orders_ties_by_id() {
        let rows: Vec<(PointId, Vec<f64>)> = vec![
            (9, vec![1.0, 0.0]),
            (3, vec![1.0, 0.0]),
            (5, vec![0.0, 1.0]),
            (1, vec![1.0, 0.0]),
        ];
        let got = scan(
            Distance::SquaredL2,
            &[1.0, 0.0],
            rows.iter().map(|(i, v)| (*i, v.as_slice())),
            3,
        );
        assert_eq!(got.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 3, 9]);
    }
}
