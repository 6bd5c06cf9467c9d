//! Labeled request corpora: on-disk loaders, train/test splits and a
//! deterministic synthetic generator.

mod load;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{extract_endpoint, parse_raw_request, Endpoint};
use crate::detector::Label;

pub use load::{load_corpus, parse_csic_text, write_labeled_container};
pub use synthetic::{generate_synthetic, inject_payload, pseudo_anomalies, Payload, PayloadClass, PayloadTable};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    UnreadablePath {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown corpus format {0:?} (expected csic, atrdf or container)")]
    UnknownFormat(String),
    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("no label could be inferred for {0}")]
    Unlabeled(PathBuf),
    #[error("split leaves no normal requests for training")]
    InsufficientNormals,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("payload table line {line}: {msg}")]
    PayloadTable { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledRequest {
    pub raw: Vec<u8>,
    pub label: Label,
    pub source: String,
}

impl LabeledRequest {
    pub fn new(raw: impl Into<Vec<u8>>, label: Label, source: impl Into<String>) -> Self {
        LabeledRequest {
            raw: raw.into(),
            label,
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Csic,
    Atrdf,
    Container,
}

impl FromStr for CorpusFormat {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s.to_ascii_lowercase().as_str() {
            "csic" => Ok(CorpusFormat::Csic),
            "atrdf" => Ok(CorpusFormat::Atrdf),
            "container" => Ok(CorpusFormat::Container),
            _ => Err(DatasetError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Csic => "csic",
            CorpusFormat::Atrdf => "atrdf",
            CorpusFormat::Container => "container",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub normal: usize,
    pub anomaly: usize,
}

/// Loaded requests plus loader diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub requests: Vec<LabeledRequest>,
    /// Entries dropped because they did not parse as HTTP requests.
    pub skipped: usize,
}

impl Corpus {
    pub fn from_requests(requests: Vec<LabeledRequest>) -> Self {
        Corpus { requests, skipped: 0 }
    }

    /// Label counts per endpoint, for requests whose endpoint resolves.
    pub fn endpoint_histogram(&self) -> BTreeMap<Endpoint, LabelCounts> {
        let mut out: BTreeMap<Endpoint, LabelCounts> = BTreeMap::new();
        for r in &self.requests {
            let Ok(e) = parse_raw_request(&r.raw).and_then(|q| extract_endpoint(&q)) else {
                continue;
            };
            let slot = out.entry(e).or_default();
            match r.label {
                Label::Normal => slot.normal += 1,
                Label::Anomaly => slot.anomaly += 1,
            }
        }
        out
    }

    /// Endpoints that only ever appear with anomalous traffic.
    pub fn endpoints_without_normals(&self) -> Vec<Endpoint> {
        self.endpoint_histogram()
            .into_iter()
            .filter(|(_, c)| c.normal == 0)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn counts(&self) -> LabelCounts {
        let anomaly = self.requests.iter().filter(|r| r.label == Label::Anomaly).count();
        LabelCounts {
            normal: self.requests.len() - anomaly,
            anomaly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Half of the normals train; the rest and every anomaly test.
    Csic,
    /// 80% of the normals train.
    Atrdf,
    /// `train_fraction` of the normals train.
    Fraction,
}

impl FromStr for SplitMode {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s {
            "csic" => Ok(SplitMode::Csic),
            "atrdf" => Ok(SplitMode::Atrdf),
            "fraction" => Ok(SplitMode::Fraction),
            _ => Err(DatasetError::InvalidSplit(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, seed: u64) -> Self {
        let train_fraction = match mode {
            SplitMode::Csic => 0.5,
            SplitMode::Atrdf | SplitMode::Fraction => 0.8,
        };
        SplitSpec { mode, train_fraction, seed }
    }

    pub fn effective_fraction(&self) -> f64 {
        match self.mode {
            SplitMode::Csic => 0.5,
            SplitMode::Atrdf => 0.8,
            SplitMode::Fraction => self.train_fraction,
        }
    }
}

/// Train/test partition. Training data holds normals only.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledRequest>,
    pub test: Vec<LabeledRequest>,
}

/// Shuffles the normals under `spec.seed`, moves `round(n × fraction)` of
/// them to training and leaves the rest, plus every anomaly, for testing.
/// Both halves keep corpus order.
pub fn split(corpus: &[LabeledRequest], spec: &SplitSpec) -> Result<Split, DatasetError> {
    let frac = spec.effective_fraction();
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(DatasetError::InvalidSplit(format!("train fraction {frac} outside (0, 1]")));
    }
    let mut normals: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus[i].label == Label::Normal)
        .collect();
    let n_train = (normals.len() as f64 * frac).round() as usize;
    if n_train == 0 {
        return Err(DatasetError::InsufficientNormals);
    }
    normals.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut in_train = vec![false; corpus.len()];
    for &i in &normals[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in corpus.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok(Split { train, test })
}

/// Splits labeled requests into two disjoint parts, taking
/// `round(n × fraction)` of each label into the first under `seed`. Both
/// parts keep input order.
pub fn holdout(requests: &[LabeledRequest], fraction: f64, seed: u64) -> Result<Split, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::InvalidSplit(format!("holdout fraction {fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = vec![false; requests.len()];
    for label in [Label::Normal, Label::Anomaly] {
        let mut idx: Vec<usize> = (0..requests.len()).filter(|&i| requests[i].label == label).collect();
        let take = (idx.len() as f64 * fraction).round() as usize;
        idx.shuffle(&mut rng);
        for &i in &idx[..take] {
            first[i] = true;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (r, f) in requests.iter().zip(first) {
        if f { a.push(r.clone()) } else { b.push(r.clone()) }
    }
    Ok(Split { train: a, test: b })
}
