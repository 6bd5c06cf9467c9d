//! Few-shot API request anomaly detection by retrieval.
//!
//! Raw HTTP requests are canonicalized into abstract token sequences, embedded
//! with a subword CBOW model, and indexed per endpoint in an HNSW cosine
//! index. A request is flagged when the scaled score of its nearest normal
//! neighbor falls below the threshold calibrated for its endpoint.

pub mod bench;
pub mod calibration;
pub mod canon;
pub mod codec;
pub mod datasets;
pub mod detector;
pub mod embedding;
pub mod index;
pub mod pipeline;
pub mod scalar;
pub mod tsv;

pub use canon::{AbstractionSchema, CanonicalRequest, Endpoint, RawHttpRequest};
pub use detector::{Label, Verdict};
pub use embedding::EmbeddingModel;
pub use scalar::{Field, Real};

/// Graph index over `f32` embeddings, the serving configuration.
pub type AnnIndex = index::HnswIndex<f32>;
/// Exhaustive-scan counterpart of [`AnnIndex`].
pub type ExactIndex = index::FlatIndex<f32>;
pub type RequestDetector = detector::Detector<f32>;
pub type Profiles = detector::ProfileSet<f32>;
/// Metrics computed without rounding.
pub type ExactMetrics = calibration::Metrics<num_rational::BigRational>;
pub type FloatMetrics = calibration::Metrics<f64>;
