use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canon::Endpoint;
use crate::scalar::Real;
use crate::tsv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        }
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Label::Normal),
            "anomaly" | "anomalous" | "attack" => Ok(Label::Anomaly),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Scored,
    UnknownEndpoint,
    EmptyTokens,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Scored => "scored",
            Reason::UnknownEndpoint => "unknown-endpoint",
            Reason::EmptyTokens => "empty-tokens",
        }
    }
}

impl FromStr for Reason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Reason::Scored, Reason::UnknownEndpoint, Reason::EmptyTokens]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown reason {s:?}"))
    }
}

/// Outcome for one request. Requests that could not be scored carry score 0
/// and are always anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict<F> {
    pub endpoint: Endpoint,
    pub score: F,
    pub threshold: Option<F>,
    pub label: Label,
    pub reason: Reason,
}

impl<F: Real> Verdict<F> {
    pub fn scored(endpoint: Endpoint, score: F, threshold: F) -> Self {
        let label = if score < threshold { Label::Anomaly } else { Label::Normal };
        Verdict {
            endpoint,
            score,
            threshold: Some(threshold),
            label,
            reason: Reason::Scored,
        }
    }

    pub fn forced(endpoint: Endpoint, threshold: Option<F>, reason: Reason) -> Self {
        Verdict {
            endpoint,
            score: F::zero(),
            threshold,
            label: Label::Anomaly,
            reason,
        }
    }

    /// Score used by calibration: `None` marks a verdict that is an anomaly
    /// regardless of threshold.
    pub fn sweep_score(&self) -> Option<F> {
        (self.reason == Reason::Scored).then_some(self.score)
    }
}

/// One tab-separated line: method, host, path, score, threshold (or `-`),
/// label, reason. Scores carry six decimals.
impl<F: Real> fmt::Display for Verdict<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fixed = |x: F| format!("{:.6}", x.to_f64().unwrap_or(f64::NAN));
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            tsv::escape(&self.endpoint.method),
            tsv::escape(&self.endpoint.host),
            tsv::escape(&self.endpoint.path),
            fixed(self.score),
            self.threshold.map_or_else(|| "-".to_string(), fixed),
            self.label,
            self.reason.as_str(),
        )
    }
}

impl<F: Real> FromStr for Verdict<F> {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if f.len() != 7 {
            return Err(format!("expected 7 fields, found {}", f.len()));
        }
        let text = |i: usize| tsv::unescape(f[i]).ok_or_else(|| format!("bad escape in field {}", i + 1));
        let num = |s: &str| F::from_str_radix(s, 10).map_err(|_| format!("bad number {s:?}"));
        Ok(Verdict {
            endpoint: Endpoint::new(text(0)?, text(1)?, text(2)?),
            score: num(f[3])?,
            threshold: if f[4] == "-" { None } else { Some(num(f[4])?) },
            label: f[5].parse()?,
            reason: f[6].parse()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strict_comparison() {
        let e = Endpoint::new("GET", "h", "/");
        assert_eq!(Verdict::scored(e.clone(), 1.0f64, 1.0).label, Label::Normal);
        assert_eq!(Verdict::scored(e.clone(), 0.3f64, 0.0).label, Label::Normal);
        assert_eq!(Verdict::scored(e.clone(), 0.0f64, 0.0).label, Label::Normal);
        assert_eq!(Verdict::scored(e.clone(), 0.49f64, 0.5).label, Label::Anomaly);
        let v = Verdict::<f32>::forced(e, None, Reason::UnknownEndpoint);
        assert_eq!(v.label, Label::Anomaly);
        assert_eq!(v.sweep_score(), None);
        assert_eq!(v.to_string(), "GET\th\t/\t0.000000\t-\tanomaly\tunknown-endpoint");
    }

    proptest! {
        #[test]
        fn label_matches_rule(score in 0.0f64..=1.0, t in 0u32..=10) {
            let t = f64::from(t) / 10.0;
            let v = Verdict::scored(Endpoint::new("POST", "a.b", "/x"), score, t);
            prop_assert_eq!(v.label == Label::Anomaly, v.reason != Reason::Scored || v.score < t);
        }

        #[test]
        fn line_round_trip(
            path in "/[ -~\t\n]{0,16}",
            score in 0.0f64..=1.0,
            t in proptest::option::of(0u32..=10),
            reason in 0usize..3,
        ) {
            let e = Endpoint::new("GET", "host:1", path);
            let v: Verdict<f64> = match reason {
                0 => Verdict::scored(e, score, f64::from(t.unwrap_or(5)) / 10.0),
                1 => Verdict::forced(e, t.map(|t| f64::from(t) / 10.0), Reason::UnknownEndpoint),
                _ => Verdict::forced(e, t.map(|t| f64::from(t) / 10.0), Reason::EmptyTokens),
            };
            let line = v.to_string();
            let back: Verdict<f64> = line.parse().unwrap();
            prop_assert_eq!(&back.endpoint, &v.endpoint);
            prop_assert_eq!(back.label, v.label);
            prop_assert_eq!(back.reason, v.reason);
            prop_assert!((back.score - v.score).abs() <= 5e-7);
            prop_assert_eq!(back.to_string(), line);
        }
    }
}
