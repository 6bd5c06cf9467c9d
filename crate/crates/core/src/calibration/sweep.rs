use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::report::{CalibrationReport, EndpointReport};
use super::{sweep_threshold, CalibrationError, ThresholdSweep};
use crate::canon::{canonicalize, parse_raw_request, AbstractionSchema, CanonError, Endpoint};
use crate::datasets::LabeledRequest;
use crate::detector::{top_score, EndpointProfile, Label, NeighborCount, ProfileSet, Threshold, to_scalar, DEFAULT_K};
use crate::embedding::EmbeddingModel;
use crate::index::{HnswIndex, Neighbor};
use crate::scalar::Real;

pub const DEFAULT_K_GRID: [usize; 10] = [2, 3, 5, 10, 20, 50, 100, 200, 500, 1000];

/// A labeled request reduced to what scoring needs. `vector` is `None` when
/// the request cannot be scored and is therefore an anomaly at any threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSample<F> {
    pub endpoint: Endpoint,
    pub vector: Option<Vec<F>>,
    pub label: Label,
}

/// Canonicalizes and embeds labeled requests. Returns the samples and the
/// number of requests skipped as malformed.
pub fn embed_samples<F: Real>(
    schema: &AbstractionSchema,
    model: &EmbeddingModel,
    requests: &[LabeledRequest],
) -> (Vec<ValidationSample<F>>, usize) {
    let out: Vec<Option<ValidationSample<F>>> = requests
        .par_iter()
        .map(|r| {
            let req = parse_raw_request(&r.raw).ok()?;
            Some(match canonicalize(&req, schema) {
                Ok(c) => {
                    let v = model.sentence_vector(&c.tokens);
                    let usable = !c.tokens.is_empty() && v.iter().any(|&x| x != 0.0);
                    ValidationSample {
                        endpoint: c.endpoint,
                        vector: usable.then(|| to_scalar(&v)),
                        label: r.label,
                    }
                }
                Err(CanonError::MissingHost) => ValidationSample {
                    endpoint: Endpoint::new(req.method.clone(), "", ""),
                    vector: None,
                    label: r.label,
                },
                Err(CanonError::MalformedRequest(_)) => return None,
            })
        })
        .collect();
    let skipped = out.iter().filter(|s| s.is_none()).count();
    (out.into_iter().flatten().collect(), skipped)
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub k_grid: Vec<usize>,
    pub steps: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            k_grid: DEFAULT_K_GRID.to_vec(),
            steps: super::DEFAULT_STEPS,
        }
    }
}

impl CalibrationOptions {
    /// Every k from 2 through 1000.
    pub fn exhaustive() -> Self {
        CalibrationOptions {
            k_grid: (2..=1000).collect(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSweep<F> {
    /// Ascending k, deduplicated.
    pub per_k: Vec<(usize, ThresholdSweep<F>)>,
    pub best: usize,
    pub k: usize,
    pub threshold: F,
    pub single_class: bool,
}

impl<F: Real> KSweep<F> {
    pub fn best_sweep(&self) -> &ThresholdSweep<F> {
        &self.per_k[self.best].1
    }
}

/// Joint grid search over `k_grid` × thresholds for one endpoint. The
/// winner has maximal F1, then the lowest threshold, then the lowest k.
///
/// All `k ≤ ef_search` share a single query per sample, since their result
/// lists are prefixes of one another.
pub fn sweep_k<F: Real>(
    samples: &[ValidationSample<F>],
    index: &HnswIndex<F>,
    endpoint: &Endpoint,
    k_grid: &[usize],
    steps: usize,
) -> Result<KSweep<F>, CalibrationError> {
    let mut ks = k_grid.to_vec();
    ks.sort_unstable();
    ks.dedup();
    match ks.first() {
        None => return Err(CalibrationError::EmptyKGrid),
        Some(&k) if k < 2 => return Err(CalibrationError::InvalidK(k)),
        _ => {}
    }
    let n = index
        .namespace_len(endpoint)
        .ok_or_else(|| crate::index::IndexError::UnknownEndpoint(endpoint.clone()))?;
    let ef = index.config().ef_search;
    let mine: Vec<&ValidationSample<F>> = samples.iter().filter(|s| &s.endpoint == endpoint).collect();
    if mine.is_empty() {
        return Err(CalibrationError::NoSamples);
    }

    let fetch = |k: usize| -> Result<Vec<Option<Vec<Neighbor<F>>>>, CalibrationError> {
        mine.par_iter()
            .map(|s| {
                s.vector
                    .as_ref()
                    .map(|v| index.query(endpoint, v, k))
                    .transpose()
                    .map_err(CalibrationError::from)
            })
            .collect()
    };
    let shared_k = ks.iter().copied().filter(|&k| k <= ef).max();
    let shared = shared_k.map(fetch).transpose()?;
    let mut by_effective: HashMap<usize, ThresholdSweep<F>> = HashMap::new();
    let mut per_k = Vec::with_capacity(ks.len());
    for &k in &ks {
        let eff = k.min(n);
        if let Some(s) = by_effective.get(&eff) {
            per_k.push((k, s.clone()));
            continue;
        }
        let owned;
        let lists = match &shared {
            Some(lists) if k <= ef => lists,
            _ => {
                owned = fetch(k)?;
                &owned
            }
        };
        let scored: Vec<(Option<F>, Label)> = lists
            .iter()
            .zip(&mine)
            .map(|(hits, s)| {
                let score = match hits {
                    Some(h) => Some(top_score(&h[..eff.min(h.len())])?),
                    None => None,
                };
                Ok((score, s.label))
            })
            .collect::<Result<_, CalibrationError>>()?;
        let sweep = sweep_threshold(&scored, steps)?;
        by_effective.insert(eff, sweep.clone());
        per_k.push((k, sweep));
    }

    let mut best = 0;
    for i in 1..per_k.len() {
        let (a, b) = (&per_k[i].1, &per_k[best].1);
        let better = match a.best_confusion().cmp_f1(&b.best_confusion()) {
            Ordering::Greater => true,
            Ordering::Equal => a.threshold < b.threshold,
            Ordering::Less => false,
        };
        if better {
            best = i;
        }
    }
    let single_class = per_k[best].1.single_class;
    if single_class {
        best = ks.iter().position(|&k| k == DEFAULT_K).unwrap_or(0);
    }
    Ok(KSweep {
        k: per_k[best].0,
        threshold: per_k[best].1.threshold,
        per_k,
        best,
        single_class,
    })
}

pub struct Calibration<F> {
    pub profiles: ProfileSet<F>,
    pub report: CalibrationReport,
}

/// Calibrates every endpoint of `index`. Endpoints without validation
/// samples keep the default profile and are marked uncalibrated.
pub fn calibrate<F: Real>(
    index: &HnswIndex<F>,
    samples: &[ValidationSample<F>],
    opts: &CalibrationOptions,
) -> Result<Calibration<F>, CalibrationError> {
    let mut groups: BTreeMap<&Endpoint, Vec<ValidationSample<F>>> = BTreeMap::new();
    let mut unknown = 0;
    for s in samples {
        if index.namespace_len(&s.endpoint).is_some() {
            groups.entry(&s.endpoint).or_default().push(s.clone());
        } else {
            unknown += 1;
        }
    }
    let mut endpoints: Vec<&Endpoint> = index.endpoints().collect();
    endpoints.sort();

    let results: Vec<(EndpointProfile<F>, EndpointReport)> = endpoints
        .par_iter()
        .map(|&e| {
            let train_count = index.namespace_len(e).unwrap_or(0);
            let Some(group) = groups.get(e) else {
                let profile = EndpointProfile::uncalibrated(e.clone(), train_count);
                return Ok((profile.clone(), EndpointReport::uncalibrated(&profile)));
            };
            let sweep = sweep_k(group, index, e, &opts.k_grid, opts.steps)?;
            let profile = EndpointProfile {
                endpoint: e.clone(),
                threshold: Threshold::new(sweep.threshold)?,
                k: NeighborCount::new(sweep.k)?,
                train_count,
                calibrated: !sweep.single_class,
            };
            let report = EndpointReport::from_sweep(&profile, group, &sweep)?;
            Ok((profile, report))
        })
        .collect::<Result<_, CalibrationError>>()?;

    let mut profiles = ProfileSet::new();
    let mut reports = Vec::with_capacity(results.len());
    for (p, r) in results {
        profiles.insert(p)?;
        reports.push(r);
    }
    Ok(Calibration {
        profiles,
        report: CalibrationReport::new(opts, unknown, reports),
    })
}
