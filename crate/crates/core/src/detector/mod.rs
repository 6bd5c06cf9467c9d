//! Classification by retrieval: embed a request, fetch its nearest normal
//! neighbors within the endpoint's namespace, scale the distances and compare
//! the top score against the endpoint's threshold.

mod profile;
mod verdict;

use std::io;

use thiserror::Error;

use crate::canon::{canonicalize, parse_raw_request, AbstractionSchema, CanonError, Endpoint, RawHttpRequest};
use crate::embedding::EmbeddingModel;
use crate::index::{HnswIndex, IndexError, Neighbor};
use crate::scalar::Real;

pub use profile::{EndpointProfile, NeighborCount, ProfileSet, Threshold, DEFAULT_K};
pub use verdict::{Label, Reason, Verdict};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("distance list is empty")]
    EmptyDistances,
    #[error("distance {0} is negative or not a number")]
    InvalidDistance(f64),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profiles file line {line}: {msg}")]
    ProfileFormat { line: usize, msg: String },
    #[error("model dimension {model} does not match index dimension {index}")]
    DimensionMismatch { model: usize, index: usize },
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Maps each distance to `1 − x / max`, so the nearest neighbor gets the
/// highest score and the farthest gets 0. A list of zeros maps to ones.
pub fn max_distance_scale<F: Real>(distances: &[F]) -> Result<Vec<F>, DetectorError> {
    let mut max = F::zero();
    for &d in distances {
        if d.is_nan() || d < F::zero() {
            return Err(DetectorError::InvalidDistance(d.to_f64().unwrap_or(f64::NAN)));
        }
        max = max.max(d);
    }
    if distances.is_empty() {
        return Err(DetectorError::EmptyDistances);
    }
    if max == F::zero() {
        return Ok(vec![F::one(); distances.len()]);
    }
    Ok(distances.iter().map(|&d| F::one() - d / max).collect())
}

/// Top scaled score of a neighbor list.
pub fn top_score<F: Real>(neighbors: &[Neighbor<F>]) -> Result<F, DetectorError> {
    let distances: Vec<F> = neighbors.iter().map(|n| n.distance).collect();
    let scaled = max_distance_scale(&distances)?;
    Ok(scaled.into_iter().fold(F::zero(), F::max))
}

/// Queries `profile.k` neighbors in the profile's namespace and returns the
/// maximum scaled score.
pub fn anomaly_score<F: Real>(
    index: &HnswIndex<F>,
    profile: &EndpointProfile<F>,
    vector: &[F],
) -> Result<F, DetectorError> {
    let hits = index.query(&profile.endpoint, vector, profile.k.get())?;
    top_score(&hits)
}

/// Converts an embedding into the index scalar type.
pub fn to_scalar<F: Real>(v: &[f32]) -> Vec<F> {
    v.iter().map(|&x| F::from_f64_lossy(f64::from(x))).collect()
}

/// Immutable serving state. `classify` takes `&self` and may be called from
/// any number of threads.
pub struct Detector<F> {
    schema: AbstractionSchema,
    model: EmbeddingModel,
    index: HnswIndex<F>,
    profiles: ProfileSet<F>,
}

impl<F: Real> Detector<F> {
    pub fn new(
        schema: AbstractionSchema,
        model: EmbeddingModel,
        index: HnswIndex<F>,
        profiles: ProfileSet<F>,
    ) -> Result<Self, DetectorError> {
        if model.dim() != index.dim() {
            return Err(DetectorError::DimensionMismatch {
                model: model.dim(),
                index: index.dim(),
            });
        }
        Ok(Detector { schema, model, index, profiles })
    }

    pub fn schema(&self) -> &AbstractionSchema {
        &self.schema
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn index(&self) -> &HnswIndex<F> {
        &self.index
    }

    pub fn profiles(&self) -> &ProfileSet<F> {
        &self.profiles
    }

    pub fn embed(&self, tokens: &[String]) -> Vec<F> {
        to_scalar(&self.model.sentence_vector(tokens))
    }

    pub fn classify(&self, raw: &[u8]) -> Result<Verdict<F>, DetectorError> {
        self.classify_request(&parse_raw_request(raw)?)
    }

    /// Every parseable request yields a verdict; only a malformed request
    /// is an error.
    pub fn classify_request(&self, req: &RawHttpRequest) -> Result<Verdict<F>, DetectorError> {
        let canonical = match canonicalize(req, &self.schema) {
            Ok(c) => c,
            Err(CanonError::MissingHost) => {
                let endpoint = Endpoint::new(req.method.clone(), "", "");
                return Ok(Verdict::forced(endpoint, None, Reason::UnknownEndpoint));
            }
            Err(e) => return Err(e.into()),
        };
        let endpoint = canonical.endpoint;
        let Some(profile) = self.profiles.get(&endpoint) else {
            return Ok(Verdict::forced(endpoint, None, Reason::UnknownEndpoint));
        };
        if self.index.namespace_len(&endpoint).is_none() {
            return Ok(Verdict::forced(endpoint, Some(profile.threshold.get()), Reason::UnknownEndpoint));
        }
        if canonical.tokens.is_empty() {
            return Ok(Verdict::forced(endpoint, Some(profile.threshold.get()), Reason::EmptyTokens));
        }
        let vector = self.embed(&canonical.tokens);
        match anomaly_score(&self.index, profile, &vector) {
            Ok(score) => Ok(Verdict::scored(endpoint, score, profile.threshold.get())),
            Err(DetectorError::Index(IndexError::ZeroVector)) => Ok(Verdict::forced(
                endpoint,
                Some(profile.threshold.get()),
                Reason::EmptyTokens,
            )),
            Err(e) => Err(e),
        }
    }
}
