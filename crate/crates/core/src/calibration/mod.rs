//! Per-endpoint calibration: confusion counts, the four classification
//! metrics, and grid searches over the decision threshold and neighbor count.
//!
//! The positive class is `Label::Anomaly`.

mod report;
mod sweep;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectorError, Label};
use crate::index::IndexError;
use crate::scalar::{Field, Real};

pub use report::{evaluate, CalibrationReport, EndpointEvaluation, EndpointReport, EvaluationReport, GridRow, KRow};
pub use sweep::{
    calibrate, embed_samples, sweep_k, CalibrationOptions, Calibration, KSweep, ValidationSample,
    DEFAULT_K_GRID,
};

pub const DEFAULT_STEPS: usize = 10;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("no samples to sweep")]
    NoSamples,
    #[error("threshold grid needs at least one step")]
    ZeroSteps,
    #[error("k grid is empty")]
    EmptyKGrid,
    #[error("k = {0} is below the minimum of 2")]
    InvalidK(usize),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Anomaly, Label::Anomaly) => self.tp += 1,
            (Label::Anomaly, Label::Normal) => self.fp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Normal, Label::Anomaly) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// F1 as the unreduced fraction `2tp / (2tp + fp + fn)`, with `0/0`
    /// read as `0/1`.
    fn f1_fraction(&self) -> (u128, u128) {
        let num = 2 * u128::from(self.tp);
        let den = num + u128::from(self.fp) + u128::from(self.fn_);
        if den == 0 {
            (0, 1)
        } else {
            (num, den)
        }
    }

    /// Exact comparison of F1 scores.
    pub fn cmp_f1(&self, other: &Confusion) -> Ordering {
        let (a, b) = self.f1_fraction();
        let (c, d) = other.f1_fraction();
        (a * d).cmp(&(c * b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub precision: T,
    pub recall: T,
    pub accuracy: T,
    pub f1: T,
}

fn ratio<T: Field>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}

/// Precision, recall, accuracy and F1, with every `0/0` taken as 0.
pub fn compute_metrics<T: Field>(c: &Confusion) -> Result<Metrics<T>, CalibrationError> {
    if c.total() == 0 {
        return Err(CalibrationError::EmptyConfusion);
    }
    let precision: T = ratio(c.tp, c.tp + c.fp);
    let recall: T = ratio(c.tp, c.tp + c.fn_);
    let accuracy = ratio(c.tp + c.tn, c.total());
    let sum = precision.clone() + recall.clone();
    let f1 = if sum == T::zero() {
        T::zero()
    } else {
        T::from_count(2) * precision.clone() * recall.clone() / sum
    };
    Ok(Metrics { precision, recall, accuracy, f1 })
}

impl Metrics<f64> {
    /// Unweighted mean of a non-empty collection.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics<f64>>) -> Option<Metrics<f64>> {
        let mut n = 0usize;
        let mut acc = Metrics { precision: 0.0, recall: 0.0, accuracy: 0.0, f1: 0.0 };
        for m in items {
            n += 1;
            acc.precision += m.precision;
            acc.recall += m.recall;
            acc.accuracy += m.accuracy;
            acc.f1 += m.f1;
        }
        (n > 0).then(|| {
            let n = n as f64;
            Metrics {
                precision: acc.precision / n,
                recall: acc.recall / n,
                accuracy: acc.accuracy / n,
                f1: acc.f1 / n,
            }
        })
    }
}

/// `i / steps` for `i = 0..=steps`.
pub fn threshold_grid<F: Real>(steps: usize) -> Vec<F> {
    let s = F::from_usize(steps).unwrap();
    (0..=steps).map(|i| F::from_usize(i).unwrap() / s).collect()
}

/// Confusion counts when every score below `t` (and every `None`) is an
/// anomaly.
pub fn confusion_at<F: Real>(samples: &[(Option<F>, Label)], t: F) -> Confusion {
    let mut c = Confusion::default();
    for &(score, actual) in samples {
        let predicted = match score {
            Some(s) if s >= t => Label::Normal,
            _ => Label::Anomaly,
        };
        c.record(predicted, actual);
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep<F> {
    /// One entry per grid point, ascending threshold.
    pub grid: Vec<(F, Confusion)>,
    /// Position of the first grid point with maximal F1.
    pub best: usize,
    pub threshold: F,
    /// Every sample carries the same label, so F1 cannot rank thresholds and
    /// `threshold` is the 0.5 fallback.
    pub single_class: bool,
    /// Counts at `threshold`.
    pub confusion: Confusion,
}

impl<F: Real> ThresholdSweep<F> {
    pub fn best_confusion(&self) -> Confusion {
        self.confusion
    }
}

/// Grid search over `{0, 1/steps, …, 1}` for the threshold with highest F1.
/// Ties go to the lower threshold.
pub fn sweep_threshold<F: Real>(
    samples: &[(Option<F>, Label)],
    steps: usize,
) -> Result<ThresholdSweep<F>, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::NoSamples);
    }
    if steps == 0 {
        return Err(CalibrationError::ZeroSteps);
    }
    let grid: Vec<(F, Confusion)> = threshold_grid(steps)
        .into_iter()
        .map(|t| (t, confusion_at(samples, t)))
        .collect();
    let mut best = 0;
    for (i, (_, c)) in grid.iter().enumerate().skip(1) {
        if c.cmp_f1(&grid[best].1) == Ordering::Greater {
            best = i;
        }
    }
    let first = samples[0].1;
    let single_class = samples.iter().all(|s| s.1 == first);
    let (threshold, confusion) = if single_class {
        let t = F::from_f64_lossy(0.5);
        (t, confusion_at(samples, t))
    } else {
        grid[best]
    };
    Ok(ThresholdSweep { grid, best, threshold, single_class, confusion })
}
