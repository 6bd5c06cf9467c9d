use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::sweep::{CalibrationOptions, KSweep, ValidationSample};
use super::{compute_metrics, CalibrationError, Confusion, Metrics};
use crate::canon::Endpoint;
use crate::detector::{EndpointProfile, Label, ProfileSet, Verdict};
use crate::scalar::Real;
use crate::tsv;

fn f64_of<F: Real>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn metrics_of(c: &Confusion) -> Option<Metrics<f64>> {
    compute_metrics(c).ok()
}

/// Macro averaging only covers endpoints that have at least one anomaly,
/// since F1 of the anomaly class is undefined otherwise.
fn counts_toward_macro(c: &Confusion) -> bool {
    c.tp + c.fn_ > 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub threshold: f64,
    pub confusion: Confusion,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub threshold: f64,
    pub confusion: Confusion,
    pub metrics: Metrics<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointReport {
    pub endpoint: Endpoint,
    pub train_count: usize,
    pub normals: usize,
    pub anomalies: usize,
    pub calibrated: bool,
    pub single_class: bool,
    pub k: usize,
    pub threshold: f64,
    pub confusion: Confusion,
    pub metrics: Option<Metrics<f64>>,
    pub k_grid: Vec<KRow>,
    /// Threshold grid at the chosen k.
    pub threshold_grid: Vec<GridRow>,
}

impl EndpointReport {
    pub(crate) fn uncalibrated<F: Real>(p: &EndpointProfile<F>) -> Self {
        EndpointReport {
            endpoint: p.endpoint.clone(),
            train_count: p.train_count,
            normals: 0,
            anomalies: 0,
            calibrated: false,
            single_class: false,
            k: p.k.get(),
            threshold: f64_of(p.threshold.get()),
            confusion: Confusion::default(),
            metrics: None,
            k_grid: Vec::new(),
            threshold_grid: Vec::new(),
        }
    }

    pub(crate) fn from_sweep<F: Real>(
        p: &EndpointProfile<F>,
        samples: &[ValidationSample<F>],
        sweep: &KSweep<F>,
    ) -> Result<Self, CalibrationError> {
        let anomalies = samples.iter().filter(|s| s.label == Label::Anomaly).count();
        let chosen = sweep.best_sweep();
        let confusion = chosen.confusion;
        let threshold_grid = chosen
            .grid
            .iter()
            .map(|(t, c)| {
                Ok(GridRow {
                    threshold: f64_of(*t),
                    confusion: *c,
                    metrics: compute_metrics(c)?,
                })
            })
            .collect::<Result<_, CalibrationError>>()?;
        let k_grid = sweep
            .per_k
            .iter()
            .map(|(k, s)| {
                let c = s.best_confusion();
                Ok(KRow {
                    k: *k,
                    threshold: f64_of(s.threshold),
                    confusion: c,
                    f1: compute_metrics::<f64>(&c)?.f1,
                })
            })
            .collect::<Result<_, CalibrationError>>()?;
        Ok(EndpointReport {
            endpoint: p.endpoint.clone(),
            train_count: p.train_count,
            normals: samples.len() - anomalies,
            anomalies,
            calibrated: p.calibrated,
            single_class: sweep.single_class,
            k: sweep.k,
            threshold: f64_of(sweep.threshold),
            confusion,
            metrics: metrics_of(&confusion),
            k_grid,
            threshold_grid,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub steps: usize,
    pub k_grid: Vec<usize>,
    /// Anomalies in the validation data were synthesized from normals.
    pub pseudo_anomalies: bool,
    pub unknown_endpoint_samples: usize,
    pub macro_metrics: Option<Metrics<f64>>,
    pub endpoints: Vec<EndpointReport>,
}

impl CalibrationReport {
    pub(crate) fn new(opts: &CalibrationOptions, unknown: usize, endpoints: Vec<EndpointReport>) -> Self {
        let macro_metrics = Metrics::mean(
            endpoints
                .iter()
                .filter(|e| counts_toward_macro(&e.confusion))
                .filter_map(|e| e.metrics.as_ref()),
        );
        CalibrationReport {
            steps: opts.steps,
            k_grid: opts.k_grid.clone(),
            pseudo_anomalies: false,
            unknown_endpoint_samples: unknown,
            macro_metrics,
            endpoints,
        }
    }

    pub fn single_class_endpoints(&self) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.iter().filter(|e| e.single_class).map(|e| &e.endpoint)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Line-oriented form. The first field names the record type: `summary`,
    /// `endpoint`, `k` or `threshold`; each type is preceded by a `#` header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# sentinel-calibration\tversion 1\n");
        let m = |m: &Option<Metrics<f64>>| match m {
            Some(m) => format!("{:.6}\t{:.6}\t{:.6}\t{:.6}", m.precision, m.recall, m.accuracy, m.f1),
            None => "-\t-\t-\t-".into(),
        };
        let c = |c: &Confusion| format!("{}\t{}\t{}\t{}", c.tp, c.fp, c.tn, c.fn_);
        let e = |e: &Endpoint| {
            format!("{}\t{}\t{}", tsv::escape(&e.method), tsv::escape(&e.host), tsv::escape(&e.path))
        };
        let grid: Vec<String> = self.k_grid.iter().map(usize::to_string).collect();
        out += "#summary\tsteps\tk_grid\tpseudo_anomalies\tunknown_endpoint_samples\tprecision\trecall\taccuracy\tf1\n";
        let _ = writeln!(
            out,
            "summary\t{}\t{}\t{}\t{}\t{}",
            self.steps,
            grid.join(","),
            self.pseudo_anomalies,
            self.unknown_endpoint_samples,
            m(&self.macro_metrics)
        );
        out += "#endpoint\tmethod\thost\tpath\ttrain_count\tnormals\tanomalies\tcalibrated\tsingle_class\tk\tthreshold\ttp\tfp\ttn\tfn\tprecision\trecall\taccuracy\tf1\n";
        for r in &self.endpoints {
            let _ = writeln!(
                out,
                "endpoint\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                e(&r.endpoint),
                r.train_count,
                r.normals,
                r.anomalies,
                r.calibrated,
                r.single_class,
                r.k,
                r.threshold,
                c(&r.confusion),
                m(&r.metrics)
            );
        }
        out += "#k\tmethod\thost\tpath\tk\tthreshold\ttp\tfp\ttn\tfn\tf1\n";
        for r in &self.endpoints {
            for row in &r.k_grid {
                let _ = writeln!(
                    out,
                    "k\t{}\t{}\t{:.6}\t{}\t{:.6}",
                    e(&r.endpoint),
                    row.k,
                    row.threshold,
                    c(&row.confusion),
                    row.f1
                );
            }
        }
        out += "#threshold\tmethod\thost\tpath\tthreshold\ttp\tfp\ttn\tfn\tprecision\trecall\taccuracy\tf1\n";
        for r in &self.endpoints {
            for row in &r.threshold_grid {
                let _ = writeln!(
                    out,
                    "threshold\t{}\t{:.6}\t{}\t{}",
                    e(&r.endpoint),
                    row.threshold,
                    c(&row.confusion),
                    m(&Some(row.metrics.clone()))
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointEvaluation {
    pub endpoint: Endpoint,
    pub confusion: Confusion,
    pub metrics: Option<Metrics<f64>>,
    pub in_macro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: usize,
    /// Samples whose endpoint has no profile; scored as anomalies, counted in
    /// `micro_metrics`, excluded from per-endpoint rows.
    pub unknown_endpoint_samples: usize,
    pub macro_endpoints: usize,
    pub macro_metrics: Option<Metrics<f64>>,
    pub micro_metrics: Option<Metrics<f64>>,
    pub endpoints: Vec<EndpointEvaluation>,
    pub train_seconds: Option<f64>,
    pub test_seconds: Option<f64>,
}

/// Per-endpoint and aggregate metrics for verdicts paired with true labels.
pub fn evaluate<F: Real>(results: &[(Verdict<F>, Label)], profiles: &ProfileSet<F>) -> EvaluationReport {
    let mut per: BTreeMap<&Endpoint, Confusion> = BTreeMap::new();
    let mut all = Confusion::default();
    let mut unknown = 0;
    for (v, actual) in results {
        all.record(v.label, *actual);
        if profiles.get(&v.endpoint).is_some() {
            per.entry(&v.endpoint).or_default().record(v.label, *actual);
        } else {
            unknown += 1;
        }
    }
    let endpoints: Vec<EndpointEvaluation> = per
        .into_iter()
        .map(|(e, c)| EndpointEvaluation {
            endpoint: e.clone(),
            confusion: c,
            metrics: metrics_of(&c),
            in_macro: counts_toward_macro(&c),
        })
        .collect();
    let included: Vec<&Metrics<f64>> = endpoints
        .iter()
        .filter(|e| e.in_macro)
        .filter_map(|e| e.metrics.as_ref())
        .collect();
    EvaluationReport {
        samples: results.len(),
        unknown_endpoint_samples: unknown,
        macro_endpoints: included.len(),
        macro_metrics: Metrics::mean(included),
        micro_metrics: metrics_of(&all),
        endpoints,
        train_seconds: None,
        test_seconds: None,
    }
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# sentinel-evaluation\tversion 1\n");
        out += "scope\tmethod\thost\tpath\ttp\tfp\ttn\tfn\tprecision\trecall\taccuracy\tf1\tin_macro\n";
        let m = |m: &Option<Metrics<f64>>| match m {
            Some(m) => format!("{:.6}\t{:.6}\t{:.6}\t{:.6}", m.precision, m.recall, m.accuracy, m.f1),
            None => "-\t-\t-\t-".into(),
        };
        for r in &self.endpoints {
            let c = &r.confusion;
            let _ = writeln!(
                out,
                "endpoint\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                tsv::escape(&r.endpoint.method),
                tsv::escape(&r.endpoint.host),
                tsv::escape(&r.endpoint.path),
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                m(&r.metrics),
                r.in_macro
            );
        }
        let _ = writeln!(out, "macro\t-\t-\t-\t-\t-\t-\t-\t{}\t{}", m(&self.macro_metrics), self.macro_endpoints);
        let _ = writeln!(out, "micro\t-\t-\t-\t-\t-\t-\t-\t{}\t{}", m(&self.micro_metrics), self.samples);
        let secs = |s: Option<f64>| s.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
        let _ = writeln!(out, "# train_seconds\t{}\ttest_seconds\t{}", secs(self.train_seconds), secs(self.test_seconds));
        out
    }
}
