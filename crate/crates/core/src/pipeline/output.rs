//! On-disk layout of an experiment:
//!
//! ```text
//! <out>/report.json                      aggregate report (schema 1)
//! <out>/teachers/<kind>-seed<N>/         checkpoint.json, loss_curve.csv
//! <out>/runs/<METHOD>-seed<N>/           metrics.json, predictions.csv,
//!                                        loss_curve.csv, reliability.csv,
//!                                        confidence_hist.csv, entropy_hist.csv,
//!                                        roc.csv, checkpoint.json
//! ```
//!
//! `predictions.csv` holds every probability vector the metrics are computed
//! from (`split,model,index,label,p0..`), written with round-trip float
//! formatting so the metrics can be recomputed exactly. Every file is
//! written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CudError, Result};
use crate::metrics::{Histogram, PredictionRecord};
use crate::model::Checkpoint;

use super::{ExperimentOutcome, RunArtifacts, SweepRow, TrainedTeacher};

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CudError::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CudError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| CudError::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| CudError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CudError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CudError::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Builds a CSV in memory from a header and rows of already-formatted cells.
fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CudError::Config(e.to_string()))
}

fn loss_rows(role: &str, curve: &[f64]) -> Vec<Vec<String>> {
    curve
        .iter()
        .enumerate()
        .map(|(i, l)| vec![role.to_string(), i.to_string(), l.to_string()])
        .collect()
}

fn histogram_rows(h: &Histogram) -> Vec<Vec<String>> {
    h.counts
        .iter()
        .enumerate()
        .map(|(b, c)| vec![h.bin_edges[b].to_string(), h.bin_edges[b + 1].to_string(), c.to_string()])
        .collect()
}

fn prediction_rows(split: &str, model: &str, recs: &[PredictionRecord]) -> Vec<Vec<String>> {
    recs.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![
                split.to_string(),
                model.to_string(),
                i.to_string(),
                r.label.map(|y| y.to_string()).unwrap_or_default(),
            ];
            row.extend(r.dist.probs().iter().map(|p| p.to_string()));
            row
        })
        .collect()
}

pub fn teacher_dir(out: &Path, teacher: &TrainedTeacher) -> PathBuf {
    out.join("teachers").join(format!("{}-seed{}", teacher.kind.name(), teacher.seed))
}

pub fn run_dir(out: &Path, run: &RunArtifacts) -> PathBuf {
    out.join("runs").join(format!("{}-seed{}", run.metrics.method, run.metrics.seed))
}

pub fn write_teacher(out: &Path, teacher: &TrainedTeacher, config_hash: &str) -> Result<PathBuf> {
    let dir = teacher_dir(out, teacher);
    write_json(
        &dir.join("checkpoint.json"),
        &Checkpoint::from_model(&teacher.model, teacher.seed, config_hash),
    )?;
    write_json(&dir.join("stats.json"), &teacher.stats)?;
    write_atomic(
        &dir.join("loss_curve.csv"),
        &csv_bytes(&["role", "epoch", "loss"], loss_rows("teacher", &teacher.loss_curve))?,
    )?;
    Ok(dir)
}

fn write_run(out: &Path, run: &RunArtifacts, teacher: &TrainedTeacher, config_hash: &str) -> Result<()> {
    let dir = run_dir(out, run);
    write_json(&dir.join("metrics.json"), &run.metrics)?;
    write_json(
        &dir.join("checkpoint.json"),
        &Checkpoint::from_model(&run.student, run.metrics.seed, config_hash),
    )?;

    let classes = run.student.num_classes();
    let mut header: Vec<String> = ["split", "model", "index", "label"].map(String::from).to_vec();
    header.extend((0..classes).map(|k| format!("p{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = prediction_rows("train", "teacher", &run.teacher_train)
        .into_iter()
        .chain(prediction_rows("test", "teacher", &run.teacher_test))
        .chain(prediction_rows("test", "student", &run.student_test))
        .chain(prediction_rows("ood", "student", &run.student_ood));
    write_atomic(&dir.join("predictions.csv"), &csv_bytes(&header, rows)?)?;

    let losses = loss_rows("teacher", &teacher.loss_curve)
        .into_iter()
        .chain(loss_rows("student", &run.student_loss_curve));
    write_atomic(&dir.join("loss_curve.csv"), &csv_bytes(&["role", "epoch", "loss"], losses)?)?;

    let rel = &run.reliability;
    let rel_rows = (0..rel.counts.len()).map(|b| {
        vec![
            rel.bin_edges[b].to_string(),
            rel.bin_edges[b + 1].to_string(),
            rel.counts[b].to_string(),
            rel.mean_confidence[b].to_string(),
            rel.mean_accuracy[b].to_string(),
        ]
    });
    write_atomic(
        &dir.join("reliability.csv"),
        &csv_bytes(&["bin_lo", "bin_hi", "count", "mean_confidence", "mean_accuracy"], rel_rows)?,
    )?;
    write_atomic(
        &dir.join("confidence_hist.csv"),
        &csv_bytes(&["bin_lo", "bin_hi", "count"], histogram_rows(&run.confidence_hist))?,
    )?;
    write_atomic(
        &dir.join("entropy_hist.csv"),
        &csv_bytes(&["bin_lo", "bin_hi", "count"], histogram_rows(&run.entropy_hist))?,
    )?;

    let roc_rows = [("ood", &run.ood_roc), ("correctness", &run.correctness_roc)]
        .into_iter()
        .filter_map(|(name, c)| c.as_ref().map(|c| (name, c)))
        .flat_map(|(name, c)| {
            c.points
                .iter()
                .map(move |(f, t)| vec![name.to_string(), f.to_string(), t.to_string()])
        });
    write_atomic(&dir.join("roc.csv"), &csv_bytes(&["curve", "fpr", "tpr"], roc_rows)?)?;
    Ok(())
}

/// Writes every artifact of `outcome` under `out`, report last.
pub fn write_experiment(out: &Path, outcome: &ExperimentOutcome) -> Result<PathBuf> {
    let hash = &outcome.report.config_hash;
    for t in &outcome.teachers {
        write_teacher(out, t, hash)?;
    }
    for run in &outcome.runs {
        let teacher = outcome
            .teachers
            .iter()
            .find(|t| t.seed == run.metrics.seed && t.kind == run.metrics.teacher)
            .expect("every run has its teacher");
        write_run(out, run, teacher, hash)?;
    }
    let path = out.join("report.json");
    write_json(&path, &outcome.report)?;
    Ok(path)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let body = rows.iter().map(|r| {
        vec![
            r.gamma.to_string(),
            r.seed.to_string(),
            r.teacher_entropy.to_string(),
            r.teacher_top1.to_string(),
            r.teacher_accuracy.to_string(),
            r.student_accuracy.to_string(),
        ]
    });
    let header = [
        "gamma",
        "seed",
        "teacher_entropy",
        "teacher_top1",
        "teacher_accuracy",
        "student_accuracy",
    ];
    write_atomic(path, &csv_bytes(&header, body)?)
}
