use std::fmt::Write;

use super::run::BenchRecord;
use super::BenchError;
use crate::tsv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Precision against queries per second; higher and to the right is
    /// better.
    Qps,
    /// Precision against build time; lower and to the right is better.
    BuildTime,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Qps => "qps",
            Axis::BuildTime => "build-time",
        }
    }
}

const COLUMNS: &str = "name\tmethod\tspace\tparams\tprecision\tqps\tbuild_time\trecall\tpareto";

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub name: String,
    pub method: String,
    pub space: String,
    pub params: String,
    pub precision: f64,
    pub qps: f64,
    pub build_time: f64,
    pub recall: Option<f64>,
    /// No other row is at least as good on both axes and better on one.
    pub pareto: bool,
}

fn dominates(a: &BenchRecord, b: &BenchRecord, axis: Axis) -> bool {
    let (ya, yb) = match axis {
        Axis::Qps => (a.qps, b.qps),
        Axis::BuildTime => (-a.build_seconds, -b.build_seconds),
    };
    a.precision >= b.precision && ya >= yb && (a.precision > b.precision || ya > yb)
}

/// Successful runs only, ordered by precision then by the second axis
/// (best first).
pub fn emit_frontier(records: &[BenchRecord], axis: Axis) -> String {
    let ok: Vec<&BenchRecord> = records.iter().filter(|r| r.succeeded()).collect();
    let mut rows: Vec<(&BenchRecord, bool)> = ok
        .iter()
        .map(|&r| (r, !ok.iter().any(|&o| dominates(o, r, axis))))
        .collect();
    rows.sort_by(|(a, _), (b, _)| {
        a.precision
            .total_cmp(&b.precision)
            .then_with(|| match axis {
                Axis::Qps => b.qps.total_cmp(&a.qps),
                Axis::BuildTime => a.build_seconds.total_cmp(&b.build_seconds),
            })
            .then_with(|| a.instance.to_string().cmp(&b.instance.to_string()))
    });
    let mut out = format!("# sentinel-frontier\taxis {}\n{COLUMNS}\n", axis.name());
    for (r, pareto) in rows {
        let i = &r.instance;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            tsv::escape(&i.name),
            tsv::escape(&i.method),
            i.space.name(),
            i.params_text(),
            r.precision,
            r.qps,
            r.build_seconds,
            r.recall.map_or_else(|| "-".into(), |x| x.to_string()),
            pareto
        );
    }
    out
}

pub fn parse_frontier(text: &str) -> Result<Vec<FrontierRow>, BenchError> {
    let bad = |line: usize, msg: String| BenchError::Frontier { line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.starts_with("# sentinel-frontier\t") => {}
        _ => return Err(bad(1, "missing frontier header".into())),
    }
    if lines.next().map(|(_, l)| l) != Some(COLUMNS) {
        return Err(bad(2, "unexpected column header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(bad(n, format!("expected 9 fields, found {}", f.len())));
        }
        let text = |j: usize| tsv::unescape(f[j]).ok_or_else(|| bad(n, "bad escape".into()));
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(n, format!("bad number {:?}", f[j])));
        rows.push(FrontierRow {
            name: text(0)?,
            method: text(1)?,
            space: f[2].to_string(),
            params: f[3].to_string(),
            precision: num(4)?,
            qps: num(5)?,
            build_time: num(6)?,
            recall: if f[7] == "-" { None } else { Some(num(7)?) },
            pareto: f[8].parse().map_err(|_| bad(n, "bad pareto flag".into()))?,
        });
    }
    Ok(rows)
}

/// Every instance with its status, in run order.
pub fn runs_table(records: &[BenchRecord]) -> String {
    let mut out = String::from("index\tname\tmethod\tspace\tgroup\tparams\tstatus\tprecision\tqps\tbuild_time\trecall\treason\n");
    for (n, r) in records.iter().enumerate() {
        let i = &r.instance;
        let status = if r.succeeded() { "ok" } else { "failed" };
        let _ = writeln!(
            out,
            "{n}\t{}\t{}\t{}\t{}\t{}\t{status}\t{}\t{}\t{}\t{}\t{}",
            tsv::escape(&i.name),
            tsv::escape(&i.method),
            i.space.name(),
            tsv::escape(&i.group),
            i.params_text(),
            r.precision,
            r.qps,
            r.build_seconds,
            r.recall.map_or_else(|| "-".into(), |x| x.to_string()),
            tsv::escape(r.failure.as_deref().unwrap_or("-")),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{Algorithm, BenchInstance, Param};
    use crate::calibration::Confusion;
    use crate::index::Distance;

    fn rec(k: u64, precision: f64, qps: f64, build: f64, failed: bool) -> BenchRecord {
        BenchRecord {
            instance: BenchInstance {
                name: "h\tx".into(),
                method: "hnsw".into(),
                algorithm: Algorithm::Hnsw,
                space: Distance::Cosine,
                group: "k".into(),
                params: vec![(Param::K, k)],
            },
            failure: failed.then(|| "boom".to_string()),
            build_seconds: build,
            latencies: vec![1.0 / qps],
            neighbors: vec![],
            confusion: Confusion::default(),
            precision,
            recall: (k % 2 == 0).then_some(0.5),
            qps,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let text = emit_frontier(&[], Axis::Qps);
        assert_eq!(text.lines().count(), 2);
        assert!(parse_frontier(&text).unwrap().is_empty());
    }

    #[test]
    fn rows_round_trip_and_mark_pareto() {
        let recs = vec![
            rec(1, 0.9, 100.0, 0.5, false),
            rec(2, 0.95, 50.0, 0.1, false),
            rec(3, 0.8, 90.0, 0.2, false),
            rec(4, 0.99, 1.0, 9.0, true),
        ];
        let text = emit_frontier(&recs, Axis::Qps);
        let rows = parse_frontier(&text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].name, "h\tx");
        assert_eq!(rows.iter().map(|r| r.precision).collect::<Vec<_>>(), vec![0.8, 0.9, 0.95]);
        assert_eq!(rows.iter().map(|r| r.pareto).collect::<Vec<_>>(), vec![false, true, true]);
        assert_eq!(rows[1].qps, 100.0);
        assert_eq!(rows[2].recall, Some(0.5));
        let build = parse_frontier(&emit_frontier(&recs, Axis::BuildTime)).unwrap();
        assert_eq!(build.iter().map(|r| r.pareto).collect::<Vec<_>>(), vec![false, false, true]);
        assert_eq!(runs_table(&recs).lines().count(), 5);
    }
}
