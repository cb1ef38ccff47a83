//! End-to-end distillation runs.
//!
//! A run trains a teacher (plain cross-entropy "FT", or the difficulty-aware
//! DUS objective), freezes its predictions on the training split, turns them
//! into per-example targets with the method's calibration operator, trains a
//! student on those targets, and evaluates the student on the test split and
//! on a shifted out-of-distribution set.
//!
//! Each `(method, seed)` pair is an independent job; teachers are shared
//! between methods of the same seed. Results do not depend on `jobs`.

mod config;
mod output;
mod summary;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    canonical_json, BaselineConfig, CsvSource, DataConfig, ExperimentConfig, MetricsConfig, NetConfig,
    SweepConfig,
};
pub use output::{write_atomic, write_experiment, write_sweep, write_teacher};
pub use summary::{load_reports, render_report, ReportFormat};

use crate::calibrate::{self, CalibratedTarget, TargetOperator, WClipParams};
use crate::data::{self, Dataset};
use crate::error::{CudError, Result};
use crate::losses::{self, DusParams, KdParams};
use crate::metrics::{self, Histogram, PredictionRecord, ReliabilityBins, RocCurve};
use crate::model::{self, MlpClassifier, OptimizerConfig};
use crate::rng;
use crate::simplex::{self, Distribution, Logits};

/// Version of the on-disk report layout.
pub const REPORT_SCHEMA: u32 = 1;
pub const OOD_SCORE_CONVENTION: &str = "score = 1 - max softmax probability; positives = OOD examples";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DistillMethod {
    /// Plain logit distillation from the FT teacher.
    Lkd,
    /// DUS teacher with W-Clip targets.
    Cud,
    DusOnly,
    WclipOnly,
    /// FT teacher logits softened by a fixed temperature.
    Ts,
    /// Label-smoothed ground truth in place of teacher outputs.
    Ls,
    /// FT teacher with the exact KL projection removing the W-Clip mass.
    ExactTilt,
}

impl DistillMethod {
    pub const ALL: [DistillMethod; 7] = [
        DistillMethod::Lkd,
        DistillMethod::Cud,
        DistillMethod::DusOnly,
        DistillMethod::WclipOnly,
        DistillMethod::Ts,
        DistillMethod::Ls,
        DistillMethod::ExactTilt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistillMethod::Lkd => "LKD",
            DistillMethod::Cud => "CUD",
            DistillMethod::DusOnly => "DUS_ONLY",
            DistillMethod::WclipOnly => "WCLIP_ONLY",
            DistillMethod::Ts => "TS",
            DistillMethod::Ls => "LS",
            DistillMethod::ExactTilt => "EXACT_TILT",
        }
    }

    pub fn teacher_kind(self) -> TeacherKind {
        match self {
            DistillMethod::Cud | DistillMethod::DusOnly => TeacherKind::Dus,
            _ => TeacherKind::Ft,
        }
    }
}

impl fmt::Display for DistillMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistillMethod {
    type Err = CudError;

    fn from_str(s: &str) -> Result<Self> {
        DistillMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CudError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// Plain cross-entropy fine-tuning.
    Ft,
    Dus,
}

impl TeacherKind {
    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::Ft => "ft",
            TeacherKind::Dus => "dus",
        }
    }

    /// The teacher objective: the configured DUS terms, or cross-entropy alone.
    pub fn objective(self, dus: &DusParams) -> DusParams {
        match self {
            TeacherKind::Dus => *dus,
            TeacherKind::Ft => DusParams {
                lambda_f: 0.0,
                lambda_h: 0.0,
                ..*dus
            },
        }
    }
}

/// Train / validation / test splits for one seed, plus the OOD set when the
/// data is synthetic.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub ood: Option<Dataset>,
}

/// The dataset is fixed by the data config; `seed` only chooses the split.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<SplitData> {
    let (full, ood) = match &cfg.data.csv {
        Some(src) => (data::load_csv(&src.path, &src.label_column)?, None),
        None => (
            data::gaussian_mixture_generate(&cfg.data.mixture)?,
            Some(data::ood_shift_generate(&cfg.data.mixture, cfg.data.ood_shift_seed)?),
        ),
    };
    let (train, val, test) = data::split(&full, cfg.data.split, seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(CudError::Config("split produced an empty train or test set".into()));
    }
    Ok(SplitData { train, val, test, ood })
}

pub fn layer_dims(input: usize, hidden: usize, classes: usize) -> Vec<usize> {
    if hidden == 0 {
        vec![input, classes]
    } else {
        vec![input, hidden, classes]
    }
}

/// Logits and probabilities of `model` on every row of `dataset`.
pub fn predict(model: &MlpClassifier, dataset: &Dataset) -> Result<Vec<(Logits, Distribution)>> {
    dataset
        .features
        .iter()
        .map(|x| {
            let z = model.forward(x)?;
            let p = simplex::softmax(&z, 1.0)?;
            Ok((z, p))
        })
        .collect()
}

pub fn records(model: &MlpClassifier, dataset: &Dataset, labeled: bool) -> Result<Vec<PredictionRecord>> {
    predict(model, dataset)?
        .into_iter()
        .zip(&dataset.labels)
        .map(|((_, p), &y)| PredictionRecord::new(p, labeled.then_some(y)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherStats {
    /// Mean predictive entropy (nats) over the training split.
    pub mean_entropy: f64,
    /// Mean top-1 probability over the training split.
    pub mean_top1: f64,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher {
    pub kind: TeacherKind,
    pub seed: u64,
    pub model: MlpClassifier,
    pub loss_curve: Vec<f64>,
    pub stats: TeacherStats,
    /// Frozen predictions on the training split, in row order.
    pub train_logits: Vec<Logits>,
}

/// Trains a teacher on `train` under `objective` (see [`TeacherKind::objective`]).
pub fn train_teacher(
    train: &Dataset,
    hidden: usize,
    objective: &DusParams,
    optim: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<(MlpClassifier, Vec<f64>, TeacherStats)> {
    objective.validate()?;
    let init_seed = rng::subseed(seed, "teacher");
    let mut model = MlpClassifier::init(&layer_dims(train.dim(), hidden, train.num_classes), init_seed)?;
    let curve = model::fit(&mut model, &train.features, optim, epochs, init_seed, |i, z| {
        let y = train.labels[i];
        Ok((
            losses::teacher_loss(z, y, objective)?,
            losses::teacher_loss_grad(z, y, objective)?,
        ))
    })?;
    let recs = records(&model, train, true)?;
    let stats = TeacherStats {
        mean_entropy: metrics::mean_entropy(&recs),
        mean_top1: metrics::mean_confidence(&recs),
        train_accuracy: metrics::accuracy(&recs)?,
        final_loss: *curve.last().expect("epochs > 0"),
    };
    Ok((model, curve, stats))
}

fn build_teacher(cfg: &ExperimentConfig, data: &SplitData, kind: TeacherKind, seed: u64) -> Result<TrainedTeacher> {
    let objective = kind.objective(&cfg.dus);
    let (model, loss_curve, stats) = train_teacher(
        &data.train,
        cfg.teacher.hidden,
        &objective,
        &cfg.optim,
        cfg.teacher.epochs,
        seed,
    )?;
    let train_logits = predict(&model, &data.train)?.into_iter().map(|(z, _)| z).collect();
    log::info!(
        "teacher {} seed {seed}: train acc {:.4}, mean entropy {:.4}, mean top-1 {:.4}",
        kind.name(),
        stats.train_accuracy,
        stats.mean_entropy,
        stats.mean_top1
    );
    Ok(TrainedTeacher {
        kind,
        seed,
        model,
        loss_curve,
        stats,
        train_logits,
    })
}

/// Per-example target for `method` from frozen teacher logits.
///
/// A correct teacher passes through unchanged for the W-Clip and tilt
/// methods; `EXACT_TILT` caps the wrong top-1 mass at `p[k*] - delta`, with
/// `delta` the W-Clip amount, so both operators remove the same mass.
pub fn make_target(
    teacher_logits: &Logits,
    label: usize,
    method: DistillMethod,
    wclip: &WClipParams,
    baselines: &BaselineConfig,
) -> Result<CalibratedTarget> {
    let dist = simplex::softmax(teacher_logits, 1.0)?;
    match method {
        DistillMethod::Lkd | DistillMethod::DusOnly => Ok(CalibratedTarget::identity(dist)),
        DistillMethod::Cud | DistillMethod::WclipOnly => calibrate::w_clip(&dist, label, wclip),
        DistillMethod::Ts => calibrate::temperature_scale(teacher_logits, baselines.ts_temperature),
        DistillMethod::Ls => calibrate::label_smooth(label, dist.num_classes(), baselines.ls_epsilon),
        DistillMethod::ExactTilt => exact_tilt_target(&dist, label, wclip),
    }
}

fn exact_tilt_target(dist: &Distribution, label: usize, wclip: &WClipParams) -> Result<CalibratedTarget> {
    let delta = calibrate::w_clip_delta(dist, label, wclip)?;
    if delta <= 0.0 {
        return Ok(CalibratedTarget::identity(dist.clone()));
    }
    let top = dist.argmax();
    let (target, _) = calibrate::exact_tilt_projection(dist, top, dist.get(top) - delta)?;
    Ok(target)
}

/// Summary of the targets a student was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub num_examples: usize,
    pub teacher_wrong: usize,
    /// Targets that differ from the raw teacher distribution.
    pub modified: usize,
    /// Mean mass removed from the wrong top-1 class over modified targets.
    pub mean_delta: f64,
    /// Largest `q[k*] - (p[k*] - delta)` over wrong-teacher examples, where
    /// `delta` is the W-Clip amount. At most ~1e-12 for CUD.
    pub max_wrong_mass_excess: f64,
    pub mean_target_entropy: f64,
}

fn target_stats(
    teacher_logits: &[Logits],
    labels: &[usize],
    targets: &[CalibratedTarget],
    wclip: &WClipParams,
) -> Result<TargetStats> {
    let mut wrong = 0;
    let mut modified = 0;
    let mut delta_sum = 0.0;
    let mut excess = f64::NEG_INFINITY;
    for ((z, &y), t) in teacher_logits.iter().zip(labels).zip(targets) {
        let p = simplex::softmax(z, 1.0)?;
        if t.operator != TargetOperator::Identity {
            modified += 1;
            delta_sum += t.delta_applied;
        }
        let top = p.argmax();
        if top != y {
            wrong += 1;
            let delta = calibrate::w_clip_delta(&p, y, wclip)?;
            excess = excess.max(t.dist.get(top) - (p.get(top) - delta));
        }
    }
    Ok(TargetStats {
        num_examples: targets.len(),
        teacher_wrong: wrong,
        modified,
        mean_delta: if modified > 0 { delta_sum / modified as f64 } else { 0.0 },
        max_wrong_mass_excess: if wrong > 0 { excess } else { 0.0 },
        mean_target_entropy: targets.iter().map(|t| simplex::entropy(&t.dist)).sum::<f64>()
            / targets.len().max(1) as f64,
    })
}

/// Mean L-infinity distance between W-Clip and exact-tilt targets over the
/// examples where W-Clip moves mass. `None` if it moves none.
pub fn wclip_tilt_gap(teacher_logits: &[Logits], labels: &[usize], wclip: &WClipParams) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (z, &y) in teacher_logits.iter().zip(labels) {
        let p = simplex::softmax(z, 1.0)?;
        let clipped = calibrate::w_clip(&p, y, wclip)?;
        if clipped.delta_applied <= 0.0 {
            continue;
        }
        let tilted = exact_tilt_target(&p, y, wclip)?;
        let gap = clipped
            .dist
            .probs()
            .iter()
            .zip(tilted.dist.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        total += gap;
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Trains a student on per-example targets (row-aligned with `train`).
pub fn distill_student(
    train: &Dataset,
    targets: &[CalibratedTarget],
    hidden: usize,
    kd: &KdParams,
    optim: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<(MlpClassifier, Vec<f64>)> {
    kd.validate()?;
    if targets.len() != train.len() {
        return Err(CudError::Dimension {
            expected: train.len(),
            actual: targets.len(),
        });
    }
    let init_seed = rng::subseed(seed, "student");
    let mut model = MlpClassifier::init(&layer_dims(train.dim(), hidden, train.num_classes), init_seed)?;
    let curve = model::fit(&mut model, &train.features, optim, epochs, init_seed, |i, z| {
        let y = Some(train.labels[i]);
        Ok((
            losses::student_loss(z, &targets[i], y, kd)?,
            losses::student_loss_grad(z, &targets[i], y, kd)?,
        ))
    })?;
    Ok((model, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub fpr95: f64,
    pub fpr90: f64,
}

/// OOD detection from prediction records; OOD rows are the positives.
pub fn ood_metrics(ind: &[PredictionRecord], ood: &[PredictionRecord]) -> Result<OodMetrics> {
    if ood.is_empty() || ind.is_empty() {
        return Err(CudError::Parameter("OOD evaluation needs non-empty IND and OOD sets".into()));
    }
    let curve = ood_curve(ind, ood)?;
    Ok(OodMetrics {
        auroc: curve.auroc,
        fpr95: metrics::fpr_at_tpr(&curve, 0.95)?,
        fpr90: metrics::fpr_at_tpr(&curve, 0.90)?,
    })
}

fn ood_curve(ind: &[PredictionRecord], ood: &[PredictionRecord]) -> Result<RocCurve> {
    let scores: Vec<f64> = ind.iter().chain(ood).map(PredictionRecord::ood_score).collect();
    let flags: Vec<bool> = std::iter::repeat_n(false, ind.len())
        .chain(std::iter::repeat_n(true, ood.len()))
        .collect();
    metrics::roc_auroc(&scores, &flags)
}

pub fn ood_eval(model: &MlpClassifier, ind_test: &Dataset, ood: &Dataset) -> Result<OodMetrics> {
    if ood.is_empty() {
        return Err(CudError::Parameter("OOD set is empty".into()));
    }
    ood_metrics(&records(model, ind_test, false)?, &records(model, ood, false)?)
}

fn correctness_curve(recs: &[PredictionRecord]) -> Result<RocCurve> {
    let scores: Vec<f64> = recs.iter().map(|r| r.confidence).collect();
    let mut flags = Vec::with_capacity(recs.len());
    for r in recs {
        flags.push(
            r.is_correct()
                .ok_or_else(|| CudError::Parameter("correctness AUROC needs labels".into()))?,
        );
    }
    metrics::roc_auroc(&scores, &flags)
}

/// AUROC of confidence for separating correct from wrong predictions. Errors
/// when every prediction is correct (or every one wrong).
pub fn correctness_auroc_of(recs: &[PredictionRecord]) -> Result<f64> {
    Ok(correctness_curve(recs)?.auroc)
}

pub fn correctness_auroc(model: &MlpClassifier, test: &Dataset) -> Result<f64> {
    correctness_auroc_of(&records(model, test, true)?)
}

/// Metrics of one `(method, seed)` run. Student metrics are on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: DistillMethod,
    pub seed: u64,
    pub teacher: TeacherKind,
    pub teacher_test_accuracy: f64,
    pub teacher_mean_entropy: f64,
    pub teacher_mean_top1: f64,
    pub student_accuracy: f64,
    pub student_mean_entropy: f64,
    pub student_mean_top1: f64,
    pub ece: f64,
    /// Absent when the student makes no test errors.
    pub ece_wrong: Option<f64>,
    pub brier: f64,
    /// Absent when the student is right (or wrong) on every test example.
    pub correctness_auroc: Option<f64>,
    /// Absent for CSV data, which has no OOD set.
    pub ood: Option<OodMetrics>,
    pub targets: TargetStats,
    pub final_student_loss: f64,
}

/// Everything written for one run: its metrics plus the series behind them.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics: RunMetrics,
    pub student: MlpClassifier,
    pub student_loss_curve: Vec<f64>,
    pub teacher_train: Vec<PredictionRecord>,
    pub teacher_test: Vec<PredictionRecord>,
    pub student_test: Vec<PredictionRecord>,
    pub student_ood: Vec<PredictionRecord>,
    pub reliability: ReliabilityBins,
    pub confidence_hist: Histogram,
    pub entropy_hist: Histogram,
    pub ood_roc: Option<RocCurve>,
    pub correctness_roc: Option<RocCurve>,
}

fn single_class_to_none<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(CudError::Parameter(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Distills and evaluates one student from a trained teacher.
pub fn run_method(
    cfg: &ExperimentConfig,
    data: &SplitData,
    teacher: &TrainedTeacher,
    method: DistillMethod,
) -> Result<RunArtifacts> {
    let seed = teacher.seed;
    let targets = teacher
        .train_logits
        .iter()
        .zip(&data.train.labels)
        .map(|(z, &y)| make_target(z, y, method, &cfg.wclip, &cfg.baselines))
        .collect::<Result<Vec<_>>>()?;
    let stats = target_stats(&teacher.train_logits, &data.train.labels, &targets, &cfg.wclip)?;
    let (student, curve) = distill_student(
        &data.train,
        &targets,
        cfg.student.hidden,
        &cfg.kd,
        &cfg.optim,
        cfg.student.epochs,
        seed,
    )?;

    let teacher_train = records(&teacher.model, &data.train, true)?;
    let teacher_test = records(&teacher.model, &data.test, true)?;
    let student_test = records(&student, &data.test, true)?;
    let student_ood = match &data.ood {
        Some(ood) => records(&student, ood, false)?,
        None => Vec::new(),
    };
    let bins = cfg.metrics.num_bins;
    let (ece, reliability) = metrics::ece(&student_test, bins)?;
    let ood_roc = if student_ood.is_empty() {
        None
    } else {
        Some(ood_curve(&student_test, &student_ood)?)
    };
    let ood = match &ood_roc {
        Some(curve) => Some(OodMetrics {
            auroc: curve.auroc,
            fpr95: metrics::fpr_at_tpr(curve, 0.95)?,
            fpr90: metrics::fpr_at_tpr(curve, 0.90)?,
        }),
        None => None,
    };
    let correctness_roc = single_class_to_none(correctness_curve(&student_test))?;

    let run = RunMetrics {
        method,
        seed,
        teacher: teacher.kind,
        teacher_test_accuracy: metrics::accuracy(&teacher_test)?,
        teacher_mean_entropy: teacher.stats.mean_entropy,
        teacher_mean_top1: teacher.stats.mean_top1,
        student_accuracy: metrics::accuracy(&student_test)?,
        student_mean_entropy: metrics::mean_entropy(&student_test),
        student_mean_top1: metrics::mean_confidence(&student_test),
        ece,
        ece_wrong: metrics::ece_wrong(&student_test, bins)?,
        brier: metrics::brier(&student_test)?,
        correctness_auroc: correctness_roc.as_ref().map(|c| c.auroc),
        ood,
        targets: stats,
        final_student_loss: *curve.last().expect("epochs > 0"),
    };
    log::info!(
        "{method} seed {seed}: student acc {:.4}, ece {:.4}, ece_wrong {}, ood auroc {}",
        run.student_accuracy,
        run.ece,
        run.ece_wrong.map_or("n/a".into(), |v| format!("{v:.4}")),
        run.ood.map_or("n/a".into(), |o| format!("{:.4}", o.auroc)),
    );
    Ok(RunArtifacts {
        confidence_hist: metrics::confidence_histogram(&student_test, bins)?,
        entropy_hist: metrics::entropy_histogram(&student_test, bins)?,
        metrics: run,
        student,
        student_loss_curve: curve,
        teacher_train,
        teacher_test,
        student_test,
        student_ood,
        reliability,
        ood_roc,
        correctness_roc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub kind: TeacherKind,
    pub seed: u64,
    pub stats: TeacherStats,
}

/// Aggregate report written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub version: String,
    pub config_hash: String,
    pub dataset: String,
    pub ood_score: String,
    pub config: ExperimentConfig,
    pub teachers: Vec<TeacherReport>,
    pub runs: Vec<RunMetrics>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub teachers: Vec<TrainedTeacher>,
    pub runs: Vec<RunArtifacts>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CudError::Config(format!("cannot start worker pool: {e}")))
}

/// Loads the data for every configured seed.
fn load_all(cfg: &ExperimentConfig) -> Result<Vec<SplitData>> {
    cfg.seeds.iter().map(|&s| load_data(cfg, s)).collect()
}

/// Trains the teachers of the given kinds for every seed, in seed order.
pub fn train_teachers(cfg: &ExperimentConfig, kinds: &[TeacherKind], jobs: usize) -> Result<Vec<TrainedTeacher>> {
    cfg.validate()?;
    let data = load_all(cfg)?;
    train_teachers_on(cfg, &data, kinds, jobs)
}

fn train_teachers_on(
    cfg: &ExperimentConfig,
    data: &[SplitData],
    kinds: &[TeacherKind],
    jobs: usize,
) -> Result<Vec<TrainedTeacher>> {
    let tasks: Vec<(usize, TeacherKind)> = (0..cfg.seeds.len())
        .flat_map(|i| kinds.iter().map(move |&k| (i, k)))
        .collect();
    thread_pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, kind)| build_teacher(cfg, &data[i], kind, cfg.seeds[i]))
            .collect()
    })
}

fn needed_kinds(methods: &[DistillMethod]) -> Vec<TeacherKind> {
    let mut kinds: Vec<TeacherKind> = methods.iter().map(|m| m.teacher_kind()).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

/// Runs every configured `(method, seed)` pair. Nothing is written to disk;
/// see [`write_experiment`].
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let config_hash = cfg.config_hash()?;
    let data = load_all(cfg)?;
    let teachers = train_teachers_on(cfg, &data, &needed_kinds(&cfg.methods), jobs)?;

    let tasks: Vec<(DistillMethod, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.seeds.len()).map(move |i| (m, i)))
        .collect();
    let runs: Vec<RunArtifacts> = thread_pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(method, i)| {
                let teacher = teachers
                    .iter()
                    .find(|t| t.seed == cfg.seeds[i] && t.kind == method.teacher_kind())
                    .expect("teacher trained for every seed and needed kind");
                run_method(cfg, &data[i], teacher, method)
            })
            .collect::<Result<_>>()
    })?;

    let report = ExperimentReport {
        schema: REPORT_SCHEMA,
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        dataset: data[0].train.name.split('/').next().unwrap_or_default().to_string(),
        ood_score: OOD_SCORE_CONVENTION.into(),
        config: cfg.clone(),
        teachers: teachers
            .iter()
            .map(|t| TeacherReport {
                kind: t.kind,
                seed: t.seed,
                stats: t.stats,
            })
            .collect(),
        runs: runs.iter().map(|r| r.metrics.clone()).collect(),
    };
    Ok(ExperimentOutcome { report, teachers, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub seed: u64,
    pub teacher_entropy: f64,
    pub teacher_top1: f64,
    pub teacher_accuracy: f64,
    pub student_accuracy: f64,
}

/// For each focal exponent: a DUS teacher and a CUD student per seed.
/// Rows are ordered by gamma, then seed.
pub fn gamma_sweep(cfg: &ExperimentConfig, gammas: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if gammas.is_empty() {
        return Err(CudError::Config("gamma sweep needs at least one value".into()));
    }
    let data = load_all(cfg)?;
    let tasks: Vec<(f64, usize)> = gammas
        .iter()
        .flat_map(|&g| (0..cfg.seeds.len()).map(move |i| (g, i)))
        .collect();
    thread_pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(gamma, i)| {
                let mut local = cfg.clone();
                local.dus.gamma = gamma;
                let teacher = build_teacher(&local, &data[i], TeacherKind::Dus, cfg.seeds[i])?;
                let run = run_method(&local, &data[i], &teacher, DistillMethod::Cud)?;
                Ok(SweepRow {
                    gamma,
                    seed: cfg.seeds[i],
                    teacher_entropy: teacher.stats.mean_entropy,
                    teacher_top1: teacher.stats.mean_top1,
                    teacher_accuracy: run.metrics.teacher_test_accuracy,
                    student_accuracy: run.metrics.student_accuracy,
                })
            })
            .collect()
    })
}

/// Loads a model checkpoint written by [`write_teacher`] or [`write_experiment`].
pub fn load_checkpoint(path: &Path) -> Result<MlpClassifier> {
    model::Checkpoint::load(path)?.into_model()
}
