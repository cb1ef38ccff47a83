//! Renders summary tables from `report.json` files alone: student accuracy,
//! ECE on errors and OOD detection, each as methods × datasets with
//! mean ± sample standard deviation over seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CudError, Result};

use super::{DistillMethod, ExperimentReport, RunMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

/// `dir/report.json` and `dir/*/report.json`, sorted by path.
pub fn load_reports(dir: &Path) -> Result<Vec<(PathBuf, ExperimentReport)>> {
    let mut paths = Vec::new();
    let top = dir.join("report.json");
    if top.is_file() {
        paths.push(top);
    }
    if dir.is_dir() {
        let entries = std::fs::read_dir(dir).map_err(|e| CudError::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CudError::io(dir, e))?;
            let candidate = entry.path().join("report.json");
            if candidate.is_file() {
                paths.push(candidate);
            }
        }
    } else if !dir.exists() {
        return Err(CudError::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CudError::Config(format!("no reports found in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(|e| CudError::io(&p, e))?;
            let report: ExperimentReport = serde_json::from_str(&text)?;
            Ok((p, report))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    mean: f64,
    /// Sample standard deviation; `None` for a single value.
    sd: Option<f64>,
    n: usize,
}

fn summarize(values: &[f64]) -> Option<Cell> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Some(Cell { mean, sd, n })
}

fn fmt_cell(cell: Option<Cell>) -> String {
    match cell {
        None => "n/a".into(),
        Some(Cell { mean, sd: None, .. }) => format!("{mean:.4}"),
        Some(Cell { mean, sd: Some(sd), .. }) => format!("{mean:.4} ± {sd:.4}"),
    }
}

type Metric = (&'static str, fn(&RunMetrics) -> Option<f64>);

const ACCURACY: &[Metric] = &[("accuracy", |r| Some(r.student_accuracy))];
const ECE_WRONG: &[Metric] = &[("ece_wrong", |r| r.ece_wrong), ("ece", |r| Some(r.ece)), ("brier", |r| Some(r.brier))];
const OOD: &[Metric] = &[
    ("auroc", |r| r.ood.map(|o| o.auroc)),
    ("fpr95", |r| r.ood.map(|o| o.fpr95)),
    ("fpr90", |r| r.ood.map(|o| o.fpr90)),
];
const TABLES: &[(&str, &[Metric])] = &[("accuracy", ACCURACY), ("ece_wrong", ECE_WRONG), ("ood", OOD)];

fn methods_in(reports: &[(String, &ExperimentReport)]) -> Vec<DistillMethod> {
    let mut methods: Vec<DistillMethod> = reports.iter().flat_map(|(_, r)| r.runs.iter().map(|x| x.method)).collect();
    methods.sort();
    methods.dedup();
    methods
}

fn cell(report: &ExperimentReport, method: DistillMethod, metric: fn(&RunMetrics) -> Option<f64>) -> Option<Cell> {
    let values: Vec<f64> = report.runs.iter().filter(|r| r.method == method).filter_map(metric).collect();
    summarize(&values)
}

/// Column label of each report: its directory relative to `root`, plus the
/// dataset name.
fn labels(root: &Path, reports: &[(PathBuf, ExperimentReport)]) -> Vec<String> {
    reports
        .iter()
        .map(|(p, r)| {
            let rel = p
                .parent()
                .and_then(|d| d.strip_prefix(root).ok())
                .map(|d| d.display().to_string())
                .unwrap_or_default();
            if rel.is_empty() {
                r.dataset.clone()
            } else {
                format!("{rel}:{}", r.dataset)
            }
        })
        .collect()
}

pub fn render_report(root: &Path, reports: &[(PathBuf, ExperimentReport)], format: ReportFormat) -> String {
    let named: Vec<(String, &ExperimentReport)> = labels(root, reports).into_iter().zip(reports.iter().map(|(_, r)| r)).collect();
    let methods = methods_in(&named);
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("table,method,dataset,metric,mean,sd,n\n");
            for (table, metrics) in TABLES {
                for &m in &methods {
                    for (name, report) in &named {
                        for (metric, f) in *metrics {
                            if let Some(c) = cell(report, m, *f) {
                                let sd = c.sd.map(|s| s.to_string()).unwrap_or_default();
                                let _ = writeln!(out, "{table},{m},{name},{metric},{},{sd},{}", c.mean, c.n);
                            }
                        }
                    }
                }
            }
        }
        ReportFormat::Text => {
            for (table, metrics) in TABLES {
                let mut header = vec!["method".to_string()];
                for (name, _) in &named {
                    for (metric, _) in *metrics {
                        header.push(if metrics.len() == 1 { name.clone() } else { format!("{name} {metric}") });
                    }
                }
                let mut rows = vec![header];
                for &m in &methods {
                    let mut row = vec![m.to_string()];
                    for (_, report) in &named {
                        for (_, f) in *metrics {
                            row.push(fmt_cell(cell(report, m, *f)));
                        }
                    }
                    rows.push(row);
                }
                let _ = writeln!(out, "== {table} ==");
                out.push_str(&align(&rows));
                out.push('\n');
            }
        }
    }
    out
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
