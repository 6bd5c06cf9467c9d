//! End-to-end steps shared by the command line and the test suites.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::bench::BenchData;
use crate::calibration::{embed_samples, ValidationSample};
use crate::canon::{canonicalize_bytes, AbstractionSchema, CanonicalRequest, Endpoint};
use crate::datasets::LabeledRequest;
use crate::detector::{to_scalar, Detector, DetectorError, Label, Verdict};
use crate::embedding::{train_cbow, EmbeddingError, EmbeddingModel, TrainingConfig, TrainingStats};
use crate::index::{HnswIndex, IndexConfig, IndexError, PointId};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("training data contains {0} anomaly-labeled requests")]
    AnomalyInTraining(usize),
    #[error("no usable training requests")]
    NoTrainingData,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Canonical forms in input order; requests that fail to canonicalize are
/// counted and left out.
pub fn canonicalize_all(schema: &AbstractionSchema, requests: &[LabeledRequest]) -> (Vec<(CanonicalRequest, Label)>, usize) {
    let out: Vec<Option<(CanonicalRequest, Label)>> = requests
        .par_iter()
        .map(|r| canonicalize_bytes(&r.raw, schema).ok().map(|c| (c, r.label)))
        .collect();
    let failed = out.iter().filter(|c| c.is_none()).count();
    (out.into_iter().flatten().collect(), failed)
}

fn normals_only(requests: &[LabeledRequest]) -> Result<(), PipelineError> {
    match requests.iter().filter(|r| r.label == Label::Anomaly).count() {
        0 => Ok(()),
        n => Err(PipelineError::AnomalyInTraining(n)),
    }
}

/// Trains the embedding on the token sequences of normal requests.
pub fn train_language_model(
    schema: &AbstractionSchema,
    requests: &[LabeledRequest],
    cfg: &TrainingConfig,
) -> Result<(EmbeddingModel, TrainingStats), PipelineError> {
    normals_only(requests)?;
    let (canon, _) = canonicalize_all(schema, requests);
    let corpus: Vec<Vec<String>> = canon.into_iter().map(|(c, _)| c.tokens).collect();
    if corpus.is_empty() {
        return Err(PipelineError::NoTrainingData);
    }
    Ok(train_cbow(&corpus, cfg)?)
}

pub struct BuildSummary<F> {
    pub index: HnswIndex<F>,
    pub per_endpoint: BTreeMap<Endpoint, usize>,
    /// Requests left out: unparseable, hostless, or without a usable vector.
    pub skipped: usize,
}

/// Embeds normal requests and inserts them into their endpoint namespaces.
/// Point ids are positions in `train`.
pub fn build_index<F: Real>(
    schema: &AbstractionSchema,
    model: &EmbeddingModel,
    train: &[LabeledRequest],
    cfg: IndexConfig,
) -> Result<BuildSummary<F>, PipelineError> {
    normals_only(train)?;
    let vectors: Vec<Option<(Endpoint, Vec<F>)>> = train
        .par_iter()
        .map(|r| {
            let c = canonicalize_bytes(&r.raw, schema).ok()?;
            let v = model.sentence_vector(&c.tokens);
            (v.iter().any(|&x| x != 0.0)).then(|| (c.endpoint, to_scalar(&v)))
        })
        .collect();
    let mut index = HnswIndex::new(model.dim(), cfg)?;
    let mut per_endpoint = BTreeMap::new();
    let mut skipped = 0;
    for (i, item) in vectors.into_iter().enumerate() {
        match item {
            Some((e, v)) => {
                index.insert(&e, &v, i as PointId)?;
                *per_endpoint.entry(e).or_insert(0) += 1;
            }
            None => skipped += 1,
        }
    }
    if index.is_empty() {
        return Err(PipelineError::NoTrainingData);
    }
    Ok(BuildSummary { index, per_endpoint, skipped })
}

/// Classifies in parallel; results keep input order.
pub fn classify_all<F: Real>(
    detector: &Detector<F>,
    requests: &[&[u8]],
) -> Vec<Result<Verdict<F>, DetectorError>> {
    requests.par_iter().map(|raw| detector.classify(raw)).collect()
}

/// Embeds a train/test split for the benchmark harness.
pub fn bench_data<F: Real>(
    schema: &AbstractionSchema,
    model: &EmbeddingModel,
    train: &[LabeledRequest],
    test: &[LabeledRequest],
) -> BenchData<F> {
    let (train_samples, _): (Vec<ValidationSample<F>>, _) = embed_samples(schema, model, train);
    let (test, _) = embed_samples(schema, model, test);
    BenchData {
        dim: model.dim(),
        train: train_samples
            .into_iter()
            .filter_map(|s| s.vector.map(|v| (s.endpoint, v)))
            .collect(),
        test,
    }
}
