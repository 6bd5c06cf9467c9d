use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::hnsw::{Graph, MAX_LEVEL};
use super::{Distance, HnswIndex, IndexConfig, IndexError};
use crate::canon::Endpoint;
use crate::codec::{CodecError, Decoder, Encoder};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"SNTLIDX\0";
pub(crate) const FORMAT_VERSION: u32 = 1;
const NO_ENTRY: u32 = u32::MAX;

/// Serializes config, sampler state, namespace table and per-namespace graphs.
pub fn index_to_bytes<F: Real>(index: &HnswIndex<F>) -> Vec<u8> {
    encode(index, FORMAT_VERSION)
}

fn encode<F: Real>(index: &HnswIndex<F>, version: u32) -> Vec<u8> {
    let mut enc = Encoder::new(MAGIC, version);
    enc.u8(F::TAG);
    enc.u64(index.dim as u64);
    let c = &index.config;
    enc.u64(c.m as u64);
    enc.u64(c.ef_construction as u64);
    enc.u64(c.ef_search as u64);
    enc.u8(c.distance.tag());
    enc.u64(c.seed);
    enc.u128(index.rng.get_word_pos());

    enc.u64(index.namespaces.len() as u64);
    for (endpoint, _) in &index.namespaces {
        enc.str(&endpoint.method);
        enc.str(&endpoint.host);
        enc.str(&endpoint.path);
    }
    for (_, g) in &index.namespaces {
        enc.u64(g.len() as u64);
        enc.u32(g.entry.unwrap_or(NO_ENTRY));
        for (node, id) in g.ids.iter().enumerate() {
            let level = g.level(node as u32);
            enc.u64(*id);
            enc.u8(level as u8);
            for nbrs in (0..=level).map(|l| g.neighbors(node as u32, l)) {
                enc.u32(nbrs.len() as u32);
                for &n in nbrs {
                    enc.u32(n);
                }
            }
        }
        let out = enc.raw();
        out.reserve(g.vectors.len() * F::WIDTH);
        for &v in &g.vectors {
            v.write_le(out);
        }
    }
    enc.finish()
}

pub fn save_index<F: Real>(index: &HnswIndex<F>, path: &Path) -> Result<(), IndexError> {
    fs::write(path, index_to_bytes(index)).map_err(CodecError::from)?;
    Ok(())
}

pub fn load_index<F: Real>(path: &Path) -> Result<HnswIndex<F>, IndexError> {
    let bytes = fs::read(path).map_err(CodecError::from)?;
    decode(&bytes)
}

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::Codec(CodecError::Corrupt(msg.into()))
}

fn count(dec: &mut Decoder<'_>) -> Result<usize, IndexError> {
    usize::try_from(dec.u64()?).map_err(|_| corrupt("count overflows usize"))
}

pub(crate) fn decode<F: Real>(bytes: &[u8]) -> Result<HnswIndex<F>, IndexError> {
    let mut dec = Decoder::open(bytes, MAGIC, FORMAT_VERSION)?;
    let tag = dec.u8()?;
    if tag != F::TAG {
        return Err(corrupt(format!("scalar width {tag} does not match {}", F::TAG)));
    }
    let dim = count(&mut dec)?;
    let config = IndexConfig {
        m: count(&mut dec)?,
        ef_construction: count(&mut dec)?,
        ef_search: count(&mut dec)?,
        distance: Distance::from_tag(dec.u8()?).ok_or_else(|| corrupt("unknown distance"))?,
        seed: dec.u64()?,
    };
    let mut index = HnswIndex::<F>::new(dim, config).map_err(|e| corrupt(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_word_pos(dec.u128()?);
    index.rng = rng;

    let n_ns = count(&mut dec)?;
    let mut endpoints = Vec::with_capacity(n_ns.min(1 << 16));
    for _ in 0..n_ns {
        endpoints.push(Endpoint::new(dec.str()?, dec.str()?, dec.str()?));
    }
    let mut by_id = HashMap::new();
    for (ns, endpoint) in endpoints.into_iter().enumerate() {
        let n = count(&mut dec)?;
        let entry = match dec.u32()? {
            NO_ENTRY => None,
            e if (e as usize) < n => Some(e),
            _ => return Err(corrupt("entry point out of range")),
        };
        let mut g = Graph::<F>::new(config.m);
        g.entry = entry;
        let mut lists = Vec::with_capacity(n.min(1 << 20));
        for node in 0..n {
            let id = dec.u64()?;
            if by_id.insert(id, (ns as u32, node as u32)).is_some() {
                return Err(corrupt(format!("duplicate id {id}")));
            }
            let level = dec.u8()? as usize;
            if level > MAX_LEVEL {
                return Err(corrupt("level out of range"));
            }
            let mut layers = Vec::with_capacity(level + 1);
            for layer in 0..=level {
                let k = dec.u32()? as usize;
                if k > g.cap(layer) {
                    return Err(corrupt("degree above capacity"));
                }
                let mut nbrs = Vec::with_capacity(k.min(1024));
                for _ in 0..k {
                    let t = dec.u32()?;
                    if t as usize >= n {
                        return Err(corrupt("link target out of range"));
                    }
                    nbrs.push(t);
                }
                layers.push(nbrs);
            }
            lists.push((id, layers));
        }
        let raw = dec.take(
            n.checked_mul(dim)
                .and_then(|x| x.checked_mul(F::WIDTH))
                .ok_or_else(|| corrupt("vector block overflow"))?,
        )?;
        let vectors: Vec<F> = raw.chunks_exact(F::WIDTH).map(F::read_le).collect();
        for ((id, layers), v) in lists.into_iter().zip(vectors.chunks_exact(dim.max(1))) {
            let node = g.push_node(id, v, layers.len() - 1);
            for (layer, nbrs) in layers.iter().enumerate() {
                g.set_neighbors(node, layer, nbrs);
            }
        }
        if index.by_endpoint.insert(endpoint.clone(), ns).is_some() {
            return Err(corrupt(format!("duplicate namespace {endpoint}")));
        }
        index.namespaces.push((endpoint, g));
    }
    dec.finish()?;
    index.by_id = by_id;
    index.validate_structure().map_err(corrupt)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn build() -> HnswIndex<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = IndexConfig { m: 6, ef_construction: 32, ef_search: 16, ..Default::default() };
        let mut idx = HnswIndex::new(6, cfg).unwrap();
        for i in 0..400u64 {
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = Endpoint::new("GET", "h", format!("/p{}", i % 3));
            idx.insert(&e, &v, i * 3 + 1).unwrap();
        }
        idx
    }

    #[test]
    fn round_trip_preserves_queries() {
        let idx = build();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.bin");
        save_index(&idx, &path).unwrap();
        let back: HnswIndex<f32> = load_index(&path).unwrap();
        assert_eq!(back.namespaces, idx.namespaces);
        assert_eq!(index_to_bytes(&back), index_to_bytes(&idx));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..100 {
            let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = Endpoint::new("GET", "h", format!("/p{}", i % 3));
            assert_eq!(idx.query(&e, &q, 10).unwrap(), back.query(&e, &q, 10).unwrap());
        }
    }

    #[test]
    fn insertion_continues_identically_after_load() {
        let mut a = build();
        let mut b: HnswIndex<f32> = decode(&index_to_bytes(&a)).unwrap();
        let e = Endpoint::new("GET", "h", "/p0");
        for i in 0..50u64 {
            let v = [i as f32, 1.0, -1.0, 0.5, 2.0, 0.1];
            a.insert(&e, &v, 10_000 + i).unwrap();
            b.insert(&e, &v, 10_000 + i).unwrap();
        }
        assert_eq!(index_to_bytes(&a), index_to_bytes(&b));
    }

    #[test]
    fn corruption_detected() {
        let bytes = index_to_bytes(&build());
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            decode::<f32>(&flipped),
            Err(IndexError::Codec(CodecError::Corrupt(_)))
        ));
        assert!(matches!(
            decode::<f32>(&encode(&build(), FORMAT_VERSION + 1)),
            Err(IndexError::Codec(CodecError::IncompatibleVersion { .. }))
        ));
        assert!(decode::<f64>(&bytes).is_err());
    }
}
