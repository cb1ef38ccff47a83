//! `cud` command line.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 usage error
//! (bad flags, missing config file, unknown override key).

pub mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CudError;
use crate::pipeline::{self, ExperimentConfig, ReportFormat, TeacherKind};

/// Environment variable consulted for the output directory when `--out` is absent.
pub const OUTPUT_DIR_ENV: &str = "CUD_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cud", version, about = "Calibrated uncertainty distillation experiments")]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "debug")]
    pub quiet: bool,
    /// Also log per-epoch losses.
    #[arg(long, global = true)]
    pub debug: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train teachers for every configured seed and write checkpoints.
    TrainTeacher {
        #[command(flatten)]
        common: CommonArgs,
        /// Teacher kinds to train (default: those the configured methods need).
        #[arg(long, value_parser = parse_kind, value_delimiter = ',')]
        kind: Vec<TeacherKind>,
    },
    /// Run every configured (method, seed) pair and write the report.
    Distill {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a DUS teacher and CUD student per focal exponent and seed.
    SweepGamma {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated gamma values (default: sweep.gammas from the config).
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
    },
    /// Evaluate a checkpoint on the test split and the OOD set of the config.
    EvalOod {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Summarize report.json files under a directory.
    Report {
        dir: PathBuf,
        /// Emit long-form CSV instead of aligned text tables.
        #[arg(long)]
        csv: bool,
    },
    /// Run the built-in numeric fixtures of every module.
    Selftest {
        /// Use this fixture file instead of the built-in one.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set kd.lambda_kd=0.8` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seeds=[N]`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (falls back to $CUD_OUTPUT_DIR, then the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parallel (method, seed) jobs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn parse_kind(s: &str) -> Result<TeacherKind, String> {
    match s {
        "ft" => Ok(TeacherKind::Ft),
        "dus" => Ok(TeacherKind::Dus),
        _ => Err(format!("unknown teacher kind {s:?} (expected ft or dus)")),
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(CudError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<CudError> for CliError {
    fn from(e: CudError) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Loads the config and applies `--seed`, `--set` and the output directory.
fn resolve_config(common: &CommonArgs) -> CliResult<ExperimentConfig> {
    if !common.config.is_file() {
        return Err(CliError::Usage(format!(
            "config file {} not found",
            absolute(&common.config).display()
        )));
    }
    let base = ExperimentConfig::load(&common.config)?;
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seeds=[{seed}]"));
    }
    // Unknown override keys are usage errors; bad values are validation errors.
    let mut cfg = base.with_overrides(&overrides).map_err(|e| match e {
        CudError::Config(m) if m.starts_with("unknown key") || m.contains("not key=value") => CliError::Usage(m),
        other => CliError::Runtime(other),
    })?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    } else if let Some(env) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        cfg.output_dir = PathBuf::from(env);
    }
    if common.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else if cli.debug {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(&cli);
    match run(cli.command, stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn out_line(stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(CudError::io("<stdout>", e)))
}

pub fn run(command: Command, stdout: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::TrainTeacher { common, kind } => {
            let cfg = resolve_config(&common)?;
            let kinds = if kind.is_empty() {
                let mut k: Vec<TeacherKind> = cfg.methods.iter().map(|m| m.teacher_kind()).collect();
                k.sort();
                k.dedup();
                k
            } else {
                kind
            };
            let hash = cfg.config_hash()?;
            let teachers = pipeline::train_teachers(&cfg, &kinds, common.jobs)?;
            for t in &teachers {
                let dir = pipeline::write_teacher(&cfg.output_dir, t, &hash)?;
                log::info!("wrote {}", absolute(&dir).display());
                out_line(
                    stdout,
                    &format!(
                        "{} seed {}: train acc {:.4}, mean entropy {:.4}, mean top-1 {:.4}\n",
                        t.kind.name(),
                        t.seed,
                        t.stats.train_accuracy,
                        t.stats.mean_entropy,
                        t.stats.mean_top1
                    ),
                )?;
            }
            Ok(())
        }
        Command::Distill { common } => {
            let cfg = resolve_config(&common)?;
            let outcome = pipeline::run_experiment(&cfg, common.jobs)?;
            let path = pipeline::write_experiment(&cfg.output_dir, &outcome)?;
            log::info!("wrote {}", absolute(&path).display());
            let reports = vec![(path, outcome.report)];
            out_line(stdout, &pipeline::render_report(&cfg.output_dir, &reports, ReportFormat::Text))
        }
        Command::SweepGamma { common, gammas } => {
            let cfg = resolve_config(&common)?;
            let gammas = if gammas.is_empty() { cfg.sweep.gammas.clone() } else { gammas };
            let rows = pipeline::gamma_sweep(&cfg, &gammas, common.jobs)?;
            let path = cfg.output_dir.join("sweep_gamma.csv");
            pipeline::write_sweep(&path, &rows)?;
            log::info!("wrote {}", absolute(&path).display());
            out_line(stdout, "gamma\tseed\tteacher_entropy\tteacher_top1\tteacher_acc\tstudent_acc\n")?;
            for r in rows {
                out_line(
                    stdout,
                    &format!(
                        "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                        r.gamma, r.seed, r.teacher_entropy, r.teacher_top1, r.teacher_accuracy, r.student_accuracy
                    ),
                )?;
            }
            Ok(())
        }
        Command::EvalOod { common, checkpoint } => {
            let cfg = resolve_config(&common)?;
            let model = pipeline::load_checkpoint(&checkpoint)?;
            let data = pipeline::load_data(&cfg, cfg.seeds[0])?;
            let ood = data
                .ood
                .as_ref()
                .ok_or_else(|| CudError::Config("the configured data source has no OOD set".into()))?;
            let metrics = pipeline::ood_eval(&model, &data.test, ood)?;
            let correctness = match pipeline::correctness_auroc(&model, &data.test) {
                Ok(v) => Some(v),
                Err(CudError::Parameter(_)) => None,
                Err(e) => return Err(e.into()),
            };
            let body = serde_json::json!({
                "checkpoint": absolute(&checkpoint),
                "ood": metrics,
                "correctness_auroc": correctness,
                "ood_score": pipeline::OOD_SCORE_CONVENTION,
            });
            out_line(stdout, &format!("{}\n", serde_json::to_string_pretty(&body).map_err(CudError::from)?))
        }
        Command::Report { dir, csv } => {
            let reports = pipeline::load_reports(&dir)?;
            let format = if csv { ReportFormat::Csv } else { ReportFormat::Text };
            out_line(stdout, &pipeline::render_report(&dir, &reports, format))
        }
        Command::Selftest { fixtures } => {
            let text = match &fixtures {
                Some(p) => std::fs::read_to_string(p).map_err(|e| CudError::io(p, e))?,
                None => selftest::BUILTIN_FIXTURES.to_string(),
            };
            let file = selftest::parse_fixtures(&text)?;
            let outcomes = selftest::run_checks(&file);
            let mut failed = Vec::new();
            for o in &outcomes {
                let status = if o.passed { "ok" } else { "FAIL" };
                out_line(stdout, &format!("[{}] {} ... {status}: {}\n", o.module, o.name, o.detail))?;
                if !o.passed {
                    failed.push(format!("[{}] {}", o.module, o.name));
                }
            }
            out_line(
                stdout,
                &format!("{} checks, {} failed\n", outcomes.len(), failed.len()),
            )?;
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(CudError::Numerical(format!(
                    "self test failed: {}",
                    failed.join(", ")
                ))))
            }
        }
    }
}
