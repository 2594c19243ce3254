use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::DsResult;
use super::EvalError;
use crate::switcher::Method;

pub const REPORT_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 10;

/// Bin counts of per-DS accuracies over `[0,10), [10,20), … [90,100]` percent.
pub fn histogram(accuracies: impl IntoIterator<Item = f64>) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0; HISTOGRAM_BINS];
    for a in accuracies {
        let b = ((a * HISTOGRAM_BINS as f64 + 1e-9).floor() as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MethodSummary {
    pub method: Method,
    pub ds_count: usize,
    /// Mean per-DS test accuracy over every evaluated DS.
    pub accuracy: Option<f64>,
    /// Same, excluding DS tagged for insufficient observability.
    pub filtered_accuracy: Option<f64>,
    pub filtered_count: usize,
    pub decision_accuracy: Option<f64>,
    pub anomaly_accuracy: Option<f64>,
    pub histogram: [usize; HISTOGRAM_BINS],
    pub train_seconds_total: f64,
    pub train_seconds_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub version: u32,
    pub results: Vec<DsResult>,
    pub summaries: Vec<MethodSummary>,
}

pub fn report(results: Vec<DsResult>) -> Report {
    let mut methods: Vec<Method> = results.iter().map(|r| r.method).collect();
    methods.sort_by_key(|m| Method::ALL.iter().position(|a| a == m));
    methods.dedup();
    let summaries = methods
        .into_iter()
        .map(|method| {
            let rows: Vec<&DsResult> = results.iter().filter(|r| r.method == method).collect();
            let scored: Vec<&DsResult> = rows.iter().copied().filter(|r| r.accuracy.is_some()).collect();
            let kept: Vec<&DsResult> = scored.iter().copied().filter(|r| !r.insufficient_observability).collect();
            MethodSummary {
                method,
                ds_count: scored.len(),
                accuracy: mean(scored.iter().filter_map(|r| r.accuracy)),
                filtered_accuracy: mean(kept.iter().filter_map(|r| r.accuracy)),
                filtered_count: kept.len(),
                decision_accuracy: mean(scored.iter().filter_map(|r| r.decision_accuracy)),
                anomaly_accuracy: mean(rows.iter().filter_map(|r| r.anomaly_accuracy)),
                histogram: histogram(scored.iter().filter_map(|r| r.accuracy)),
                train_seconds_total: rows.iter().map(|r| r.train_seconds).sum(),
                train_seconds_max: rows.iter().map(|r| r.train_seconds).fold(0.0, f64::max),
            }
        })
        .collect();
    Report { version: REPORT_VERSION, results, summaries }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.1}%", 100.0 * v))
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.summaries.iter().all(|s| s.ds_count == 0)
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from(
            "ds,method,classes,train_frames,test_frames,accuracy,decision_accuracy,train_accuracy,anomaly_accuracy,insufficient_observability,train_seconds\n",
        );
        for r in &self.results {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.6}",
                r.ds.0,
                r.method,
                r.classes,
                r.train_frames,
                r.test_frames,
                opt(r.accuracy),
                opt(r.decision_accuracy),
                opt(r.train_accuracy),
                opt(r.anomaly_accuracy),
                r.insufficient_observability,
                r.train_seconds
            );
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("method,bin_low,bin_high,count\n");
        for s in &self.summaries {
            for (i, c) in s.histogram.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", s.method, i * 10, (i + 1) * 10, c);
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        if self.is_empty() {
            return "no DS evaluated\n".into();
        }
        let mut out = String::new();
        for s in &self.summaries {
            let _ = writeln!(out, "{}: {} DS", s.method, s.ds_count);
            let _ = writeln!(out, "  accuracy (all DS)       {}", pct(s.accuracy));
            let _ =
                writeln!(out, "  accuracy (observable)   {} over {} DS", pct(s.filtered_accuracy), s.filtered_count);
            let _ = writeln!(out, "  decision accuracy       {}", pct(s.decision_accuracy));
            let _ = writeln!(out, "  anomaly accuracy        {}", pct(s.anomaly_accuracy));
            let _ = writeln!(out, "  histogram (10% bins)    {:?}", s.histogram);
            let _ = writeln!(
                out,
                "  training time           {:.3} s total, {:.3} s max",
                s.train_seconds_total, s.train_seconds_max
            );
        }
        out
    }
}

/// Writes `report.json`, `results.csv`, `histogram.csv` and `summary.txt`.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let files = [
        ("report.json", serde_json::to_string_pretty(report).expect("reports serialize") + "\n"),
        ("results.csv", report.results_csv()),
        ("histogram.csv", report.histogram_csv()),
        ("summary.txt", report.summary_text()),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| EvalError::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}
