//! Subword CBOW embeddings.
//!
//! Each word is represented by its own input row plus the rows of its hashed
//! character n-grams, so unseen words still receive a vector built from the
//! n-grams they share with the training vocabulary.

mod io;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;

pub use io::{load_model, model_to_bytes, save_model};
pub use train::{train_cbow, TrainingStats};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("corpus is empty after filtering words seen fewer than {min_word_count} times")]
    EmptyCorpus { min_word_count: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub min_ngram: usize,
    pub max_ngram: usize,
    pub bucket_count: usize,
    pub negatives: usize,
    pub min_word_count: u64,
    pub seed: u64,
    /// Worker threads. More than one enables racy lock-free updates, which
    /// are not reproducible.
    pub threads: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.05,
            dim: 100,
            window: 5,
            epochs: 5,
            min_ngram: 3,
            max_ngram: 6,
            bucket_count: 2_000_000,
            negatives: 5,
            min_word_count: 5,
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.min_ngram == 0 || self.min_ngram > self.max_ngram {
            return bad("need 0 < min_ngram <= max_ngram");
        }
        if self.bucket_count == 0 || self.bucket_count > u32::MAX as usize {
            return bad("bucket_count must be in 1..=u32::MAX");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.window == 0 || self.epochs == 0 {
            return bad("window and epochs must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

/// Character n-grams of `word` wrapped in `<` and `>`, ordered by start
/// position then length, followed by the whole wrapped word if it was not
/// already produced.
pub fn char_ngrams(word: &str, minn: usize, maxn: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    let mut has_full = false;
    for start in 0..wrapped.len() {
        for len in minn..=maxn {
            let end = start + len;
            if end > wrapped.len() {
                break;
            }
            if start == 0 && end == wrapped.len() {
                has_full = true;
            }
            out.push(wrapped[start..end].iter().collect());
        }
    }
    if !has_full {
        out.push(wrapped.iter().collect());
    }
    out
}

/// 32-bit FNV-1a of the n-gram bytes, reduced modulo `bucket_count`.
pub fn hash_ngram(ngram: &str, bucket_count: usize) -> usize {
    let mut h: u32 = 0x811c_9dc5;
    for &b in ngram.as_bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h as usize % bucket_count
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub config: TrainingConfig,
    words: Vec<String>,
    counts: Vec<u64>,
    word_ids: HashMap<String, u32>,
    /// `vocab_len × dim`, row-major.
    word_matrix: Vec<f32>,
    /// `bucket_count × dim`, row-major.
    ngram_matrix: Vec<f32>,
}

impl EmbeddingModel {
    pub(crate) fn from_parts(
        config: TrainingConfig,
        vocab: Vec<(String, u64)>,
        word_matrix: Vec<f32>,
        ngram_matrix: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(word_matrix.len(), vocab.len() * config.dim);
        debug_assert_eq!(ngram_matrix.len(), config.bucket_count * config.dim);
        let word_ids = vocab
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i as u32))
            .collect();
        let (words, counts) = vocab.into_iter().unzip();
        EmbeddingModel {
            config,
            words,
            counts,
            word_ids,
            word_matrix,
            ngram_matrix,
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.words.len()
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.word_ids.get(word).copied()
    }

    pub fn vocab(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(String::as_str).zip(self.counts.iter().copied())
    }

    pub(crate) fn word_matrix(&self) -> &[f32] {
        &self.word_matrix
    }

    pub(crate) fn ngram_matrix(&self) -> &[f32] {
        &self.ngram_matrix
    }

    fn ngram_buckets(&self, word: &str) -> Vec<usize> {
        char_ngrams(word, self.config.min_ngram, self.config.max_ngram)
            .iter()
            .map(|g| hash_ngram(g, self.config.bucket_count))
            .collect()
    }

    /// Mean of the n-gram bucket rows of `word`, ignoring any word row.
    pub fn ngram_vector(&self, word: &str) -> Vec<f32> {
        let dim = self.dim();
        let mut v = vec![0.0f32; dim];
        if word.is_empty() {
            return v;
        }
        let buckets = self.ngram_buckets(word);
        for &b in &buckets {
            add_row(&mut v, &self.ngram_matrix[b * dim..(b + 1) * dim]);
        }
        scale(&mut v, 1.0 / buckets.len() as f32);
        v
    }

    /// In-vocabulary words average their word row with their n-gram rows;
    /// anything else averages n-gram rows only.
    pub fn word_vector(&self, word: &str) -> Vec<f32> {
        let dim = self.dim();
        let Some(id) = self.word_id(word) else {
            return self.ngram_vector(word);
        };
        let id = id as usize;
        let buckets = self.ngram_buckets(word);
        let mut v = self.word_matrix[id * dim..(id + 1) * dim].to_vec();
        for &b in &buckets {
            add_row(&mut v, &self.ngram_matrix[b * dim..(b + 1) * dim]);
        }
        scale(&mut v, 1.0 / (buckets.len() + 1) as f32);
        v
    }

    /// Mean of the L2-normalized word vectors. An empty sequence yields the
    /// zero vector.
    ///
    /// Terms are summed in sorted token order so any permutation of the input
    /// produces a bitwise-identical result.
    pub fn sentence_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f32> {
        let mut acc = vec![0.0f32; self.dim()];
        if tokens.is_empty() {
            return acc;
        }
        let mut sorted: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        sorted.sort_unstable();
        for t in sorted {
            let mut v = self.word_vector(t);
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if n > 0.0 {
                scale(&mut v, 1.0 / n);
                add_row(&mut acc, &v);
            }
        }
        scale(&mut acc, 1.0 / tokens.len() as f32);
        acc
    }
}

fn add_row(acc: &mut [f32], row: &[f32]) {
    for (a, r) in acc.iter_mut().zip(row) {
        *a += r;
    }
}

fn scale(v: &mut [f32], s: f32) {
    for x in v {
        *x *= s;
    }
}
