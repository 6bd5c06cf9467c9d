use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, BenchInstance, Param};
use super::BenchData;
use crate::calibration::{compute_metrics, confusion_at, sweep_threshold, Confusion, DEFAULT_STEPS};
use crate::canon::Endpoint;
use crate::detector::{top_score, Label};
use crate::index::{Distance, FlatIndex, HnswIndex, IndexConfig, IndexError, Neighbor, NeighborIndex, PointId};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// Per endpoint, the best-F1 threshold on the grid with this many steps.
    BestF1 { steps: usize },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Values for parameters an instance does not bind.
    pub base: IndexConfig,
    pub k: usize,
    pub threshold: ThresholdPolicy,
    /// Also measure recall@k against exhaustive search.
    pub recall: bool,
}

/// Query beam of the benchmarked library when left unset; queries widen it
/// to `k`.
pub const LIBRARY_EF_SEARCH: usize = 10;

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            base: IndexConfig {
                ef_search: LIBRARY_EF_SEARCH,
                ..IndexConfig::default()
            },
            k: 10,
            threshold: ThresholdPolicy::BestF1 { steps: DEFAULT_STEPS },
            recall: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance: BenchInstance,
    /// Why the instance produced no measurements.
    pub failure: Option<String>,
    pub build_seconds: f64,
    pub latencies: Vec<f64>,
    pub neighbors: Vec<Vec<PointId>>,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: Option<f64>,
    pub qps: f64,
}

impl BenchRecord {
    fn failed(instance: &BenchInstance, reason: String) -> Self {
        BenchRecord {
            instance: instance.clone(),
            failure: Some(reason),
            build_seconds: 0.0,
            latencies: Vec::new(),
            neighbors: Vec::new(),
            confusion: Confusion::default(),
            precision: 0.0,
            recall: None,
            qps: 0.0,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn total_query_seconds(&self) -> f64 {
        self.latencies.iter().sum()
    }
}

fn build<F: Real>(
    inst: &BenchInstance,
    data: &BenchData<F>,
    base: &IndexConfig,
) -> Result<(Box<dyn NeighborIndex<F>>, f64), IndexError> {
    let param = |p: Param, d: usize| inst.param(p).map_or(d, |v| v as usize);
    let start = Instant::now();
    let mut index: Box<dyn NeighborIndex<F>> = match inst.algorithm {
        Algorithm::Hnsw => Box::new(HnswIndex::new(
            data.dim,
            IndexConfig {
                m: param(Param::M, base.m),
                ef_construction: param(Param::EfConstruction, base.ef_construction),
                ef_search: param(Param::EfSearch, base.ef_search),
                distance: inst.space,
                seed: base.seed,
            },
        )?),
        Algorithm::BruteForce => Box::new(FlatIndex::new(data.dim, inst.space)),
    };
    for (i, (e, v)) in data.train.iter().enumerate() {
        index.insert(e, v, i as PointId)?;
    }
    Ok((index, start.elapsed().as_secs_f64()))
}

/// Inner-product distances go negative for long vectors; scaling needs
/// non-negative input, so those are clamped to zero.
fn score<F: Real>(hits: &[Neighbor<F>]) -> Option<F> {
    let clamped: Vec<Neighbor<F>> = hits
        .iter()
        .map(|n| Neighbor { id: n.id, distance: n.distance.max(F::zero()) })
        .collect();
    top_score(&clamped).ok()
}

fn classify<F: Real>(
    data: &BenchData<F>,
    scores: &[Option<F>],
    policy: ThresholdPolicy,
) -> Confusion {
    let mut groups: BTreeMap<&Endpoint, Vec<(Option<F>, Label)>> = BTreeMap::new();
    for (s, q) in scores.iter().zip(&data.test) {
        groups.entry(&q.endpoint).or_default().push((*s, q.label));
    }
    let mut total = Confusion::default();
    for samples in groups.values() {
        let c = match policy {
            ThresholdPolicy::Fixed(t) => confusion_at(samples, F::from_f64_lossy(t)),
            ThresholdPolicy::BestF1 { steps } => sweep_threshold(samples, steps.max(1))
                .map(|s| s.best_confusion())
                .unwrap_or_default(),
        };
        total.merge(&c);
    }
    total
}

fn run_one<F: Real>(
    inst: &BenchInstance,
    data: &BenchData<F>,
    opts: &BenchOptions,
    oracles: &mut HashMap<Distance, FlatIndex<F>>,
) -> Result<BenchRecord, IndexError> {
    let k = inst.param(Param::K).map_or(opts.k, |v| v as usize);
    let (index, build_seconds) = build(inst, data, &opts.base)?;

    let run = |q: &crate::calibration::ValidationSample<F>| -> Result<Option<Vec<Neighbor<F>>>, IndexError> {
        let Some(v) = &q.vector else { return Ok(None) };
        match index.query(&q.endpoint, v, k) {
            Ok(h) => Ok(Some(h)),
            Err(IndexError::UnknownEndpoint(_) | IndexError::ZeroVector | IndexError::NonFinite) => Ok(None),
            Err(e) => Err(e),
        }
    };
    for q in &data.test {
        run(q)?;
    }
    let mut latencies = Vec::with_capacity(data.test.len());
    let mut results = Vec::with_capacity(data.test.len());
    for q in &data.test {
        let start = Instant::now();
        let hits = run(q)?;
        let elapsed = start.elapsed().as_secs_f64();
        if hits.is_some() {
            latencies.push(elapsed);
        }
        results.push(hits);
    }

    let scores: Vec<Option<F>> = results.iter().map(|h| h.as_deref().and_then(score)).collect();
    let confusion = classify(data, &scores, opts.threshold);
    let precision = compute_metrics::<f64>(&confusion).map(|m| m.precision).unwrap_or(0.0);

    let recall = if opts.recall {
        if !oracles.contains_key(&inst.space) {
            let mut flat = FlatIndex::new(data.dim, inst.space);
            for (i, (e, v)) in data.train.iter().enumerate() {
                flat.insert(e, v, i as PointId)?;
            }
            oracles.insert(inst.space, flat);
        }
        let oracle = &oracles[&inst.space];
        let (mut found, mut wanted) = (0usize, 0usize);
        for (q, hits) in data.test.iter().zip(&results) {
            let (Some(v), Some(hits)) = (&q.vector, hits) else { continue };
            let exact = oracle.query(&q.endpoint, v, k)?;
            wanted += exact.len();
            found += hits.iter().filter(|h| exact.iter().any(|e| e.id == h.id)).count();
        }
        Some(if wanted == 0 { 1.0 } else { found as f64 / wanted as f64 })
    } else {
        None
    };

    let total: f64 = latencies.iter().sum();
    Ok(BenchRecord {
        instance: inst.clone(),
        failure: None,
        build_seconds,
        qps: if total > 0.0 { latencies.len() as f64 / total } else { 0.0 },
        latencies,
        neighbors: results
            .into_iter()
            .map(|h| h.map(|h| h.iter().map(|n| n.id).collect()).unwrap_or_default())
            .collect(),
        confusion,
        precision,
        recall,
    })
}

/// Runs every instance in order on the same data. A failing instance is
/// recorded with its reason and the suite continues.
pub fn run_bench<F: Real>(instances: &[BenchInstance], data: &BenchData<F>, opts: &BenchOptions) -> Vec<BenchRecord> {
    let mut oracles = HashMap::new();
    instances
        .iter()
        .map(|inst| {
            run_one(inst, data, opts, &mut oracles).unwrap_or_else(|e| BenchRecord::failed(inst, e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{synthetic_bench_data, BenchConfig};

    #[test]
    fn oracle_dominates_and_failures_are_isolated() {
        let cfg = BenchConfig::parse(
            "- name: t\n  method: [hnsw, bruteforce]\n  space: cosine\n  run_groups:\n    ef_construction:\n      query_args: [[4, 40]]\n",
        )
        .unwrap();
        let data = synthetic_bench_data::<f32>(2, 300, 20, 20, 16, 5);
        let opts = BenchOptions {
            base: IndexConfig { m: 8, ef_search: 16, ..Default::default() },
            ..Default::default()
        };
        let recs = run_bench(&cfg.expand_instances(), &data, &opts);
        assert_eq!(recs.len(), 4);
        assert!(recs[0].failure.as_deref().unwrap().contains("ef_construction"));
        for r in &recs[1..] {
            assert!(r.succeeded());
            assert!(r.build_seconds > 0.0);
            assert_eq!(r.latencies.len(), 80);
            let implied = r.qps * r.total_query_seconds();
            assert!((implied - 80.0).abs() < 1e-6);
        }
        assert_eq!(recs[2].recall, Some(1.0));
        assert!(recs[1].recall.unwrap() > 0.8);
        let again = run_bench(&cfg.expand_instances(), &data, &opts);
        let p: Vec<f64> = recs.iter().map(|r| r.precision).collect();
        assert_eq!(p, again.iter().map(|r| r.precision).collect::<Vec<_>>());
    }
}
