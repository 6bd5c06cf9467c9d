use std::fs;
use std::path::Path;

use crate::codec::{CodecError, Decoder, Encoder};

use super::{EmbeddingError, EmbeddingModel, TrainingConfig};

const MAGIC: &[u8; 8] = b"SNTLEMB\0";
pub(crate) const FORMAT_VERSION: u32 = 1;

/// Serializes a model: config block, vocabulary, word rows, n-gram rows.
pub fn model_to_bytes(model: &EmbeddingModel) -> Vec<u8> {
    encode(model, FORMAT_VERSION)
}

fn encode(model: &EmbeddingModel, version: u32) -> Vec<u8> {
    let c = &model.config;
    let mut enc = Encoder::new(MAGIC, version);
    enc.f64(c.learning_rate);
    for v in [
        c.dim,
        c.window,
        c.epochs,
        c.min_ngram,
        c.max_ngram,
        c.bucket_count,
        c.negatives,
    ] {
        enc.u64(v as u64);
    }
    enc.u64(c.min_word_count);
    enc.u64(c.seed);
    enc.u64(c.threads as u64);

    enc.u64(model.vocab_len() as u64);
    for (w, n) in model.vocab() {
        enc.str(w);
        enc.u64(n);
    }
    enc.f32s(model.word_matrix());
    enc.f32s(model.ngram_matrix());
    enc.finish()
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<(), EmbeddingError> {
    fs::write(path, model_to_bytes(model)).map_err(CodecError::from)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel, EmbeddingError> {
    let bytes = fs::read(path).map_err(CodecError::from)?;
    decode(&bytes)
}

fn usize_field(dec: &mut Decoder<'_>) -> Result<usize, CodecError> {
    usize::try_from(dec.u64()?).map_err(|_| CodecError::Corrupt("field overflows usize".into()))
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EmbeddingModel, EmbeddingError> {
    let mut dec = Decoder::open(bytes, MAGIC, FORMAT_VERSION)?;
    let learning_rate = dec.f64()?;
    let mut f = [0usize; 7];
    for slot in &mut f {
        *slot = usize_field(&mut dec)?;
    }
    let config = TrainingConfig {
        learning_rate,
        dim: f[0],
        window: f[1],
        epochs: f[2],
        min_ngram: f[3],
        max_ngram: f[4],
        bucket_count: f[5],
        negatives: f[6],
        min_word_count: dec.u64()?,
        seed: dec.u64()?,
        threads: usize_field(&mut dec)?,
    };
    config
        .validate()
        .map_err(|e| CodecError::Corrupt(format!("stored config: {e}")))?;

    let n = usize_field(&mut dec)?;
    let mut vocab = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let w = dec.str()?;
        vocab.push((w, dec.u64()?));
    }
    let word_len = n
        .checked_mul(config.dim)
        .ok_or_else(|| CodecError::Corrupt("matrix size overflow".into()))?;
    let ngram_len = config
        .bucket_count
        .checked_mul(config.dim)
        .ok_or_else(|| CodecError::Corrupt("matrix size overflow".into()))?;
    let word_matrix = dec.f32s(word_len)?;
    let ngram_matrix = dec.f32s(ngram_len)?;
    dec.finish()?;
    Ok(EmbeddingModel::from_parts(config, vocab, word_matrix, ngram_matrix))
}
