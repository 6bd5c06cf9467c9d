use std::collections::{HashMap, HashSet};

use super::{scan, Distance, IndexError, Neighbor, NeighborIndex, PointId};
use crate::canon::Endpoint;
use crate::scalar::Real;

/// Exhaustive-scan index: building it is a copy, every query is exact.
#[derive(Debug, Clone)]
pub struct FlatIndex<F> {
    distance: Distance,
    dim: usize,
    namespaces: HashMap<Endpoint, (Vec<PointId>, Vec<F>)>,
    ids: HashSet<PointId>,
}

impl<F: Real> FlatIndex<F> {
    pub fn new(dim: usize, distance: Distance) -> Self {
        FlatIndex {
            distance,
            dim,
            namespaces: HashMap::new(),
            ids: HashSet::new(),
        }
    }
}

impl<F: Real> NeighborIndex<F> for FlatIndex<F> {
    fn insert(&mut self, endpoint: &Endpoint, vector: &[F], id: PointId) -> Result<(), IndexError> {
        if vector.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.ids.contains(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let prepared = self.distance.prepare(vector)?;
        let (ids, vectors) = self.namespaces.entry(endpoint.clone()).or_default();
        ids.push(id);
        vectors.extend_from_slice(&prepared);
        self.ids.insert(id);
        Ok(())
    }

    fn query(&self, endpoint: &Endpoint, vector: &[F], k: usize) -> Result<Vec<Neighbor<F>>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if vector.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        let (ids, vectors) = self
            .namespaces
            .get(endpoint)
            .ok_or_else(|| IndexError::UnknownEndpoint(endpoint.clone()))?;
        let q = self.distance.prepare(vector)?;
        Ok(scan(
            self.distance,
            &q,
            ids.iter().copied().zip(vectors.chunks_exact(self.dim)),
            k,
        ))
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}
