//! Benchmark harness: expands a declarative configuration into index
//! instances, measures build time, per-query latency and classification
//! precision, and writes frontier tables.

mod config;
mod frontier;
mod run;

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calibration::ValidationSample;
use crate::canon::Endpoint;
use crate::detector::Label;
use crate::scalar::Real;

pub use config::{Algorithm, BenchConfig, BenchEntry, BenchInstance, Param, RunGroup};
pub use frontier::{emit_frontier, parse_frontier, runs_table, Axis, FrontierRow};
pub use run::{run_bench, BenchOptions, BenchRecord, ThresholdPolicy, LIBRARY_EF_SEARCH};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench config{}{}: {msg}", line.map(|l| format!(" line {l}")).unwrap_or_default(), if field.is_empty() { String::new() } else { format!(" at {field}") })]
    Schema {
        line: Option<usize>,
        field: String,
        msg: String,
    },
    #[error("frontier table line {line}: {msg}")]
    Frontier { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Pre-embedded vectors: indexed training points and labeled queries.
#[derive(Debug, Clone)]
pub struct BenchData<F> {
    pub dim: usize,
    pub train: Vec<(Endpoint, Vec<F>)>,
    pub test: Vec<ValidationSample<F>>,
}

/// `n` random unit vectors, components drawn uniformly before normalizing.
pub fn random_unit_vectors<F: Real>(n: usize, dim: usize, seed: u64) -> Vec<Vec<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_unit(&mut rng, dim)).collect()
}

fn random_unit<F: Real>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<F> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| F::from_f64_lossy(x / n)).collect();
        }
    }
}

/// Clustered synthetic vectors over `endpoints` namespaces. Each endpoint
/// has its own random center; training points scatter around it, normal
/// queries are jittered copies of training points, anomalies are fresh
/// random directions.
pub fn synthetic_bench_data<F: Real>(
    endpoints: usize,
    train_per_endpoint: usize,
    normals_per_endpoint: usize,
    anomalies_per_endpoint: usize,
    dim: usize,
    seed: u64,
) -> BenchData<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng, base: &[f64], scale: f64| -> Vec<f64> {
        let noise: Vec<f64> = random_unit(rng, dim);
        base.iter().zip(noise).map(|(b, n)| b + scale * n).collect()
    };
    let cast = |v: Vec<f64>| v.into_iter().map(F::from_f64_lossy).collect::<Vec<F>>();
    for e in 0..endpoints {
        let endpoint = Endpoint::new("GET", "bench.example", format!("/e{e}"));
        let center: Vec<f64> = random_unit(&mut rng, dim);
        let points: Vec<Vec<f64>> = (0..train_per_endpoint).map(|_| jitter(&mut rng, &center, 0.6)).collect();
        for p in &points {
            train.push((endpoint.clone(), cast(p.clone())));
        }
        for i in 0..normals_per_endpoint {
            let base = &points[i % points.len().max(1)];
            test.push(ValidationSample {
                endpoint: endpoint.clone(),
                vector: Some(cast(jitter(&mut rng, base, 0.05))),
                label: Label::Normal,
            });
        }
        for _ in 0..anomalies_per_endpoint {
            test.push(ValidationSample {
                endpoint: endpoint.clone(),
                vector: Some(random_unit(&mut rng, dim)),
                label: Label::Anomaly,
            });
        }
    }
    BenchData { dim, train, test }
}
