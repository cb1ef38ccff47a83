//! Fixture-driven self test: each check names an operation, its JSON
//! arguments and the expected result (scalar or vector, absolute tolerance),
//! or `"expect_error": true`.

use serde::Deserialize;
use serde_json::Value;

use crate::calibrate::{self, WClipParams};
use crate::data::{self, Dataset};
use crate::error::{CudError, Result};
use crate::losses::{self, DusParams, KdParams};
use crate::metrics::{self, PredictionRecord, RocCurve};
use crate::model::{self, Layer, MlpClassifier};
use crate::simplex::{self, Distribution, Logits};

pub const BUILTIN_FIXTURES: &str = include_str!("../../fixtures/selftest.json");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub checks: Vec<Check>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub module: String,
    pub name: String,
    pub op: String,
    pub args: Value,
    /// Present (possibly `null`) unless the check expects an error.
    #[serde(default, deserialize_with = "present")]
    pub expect: Option<Value>,
    #[serde(default)]
    pub expect_error: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// Keeps an explicit `null` as `Some(Value::Null)` rather than "absent".
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn parse_fixtures(text: &str) -> Result<FixtureFile> {
    let file: FixtureFile = serde_json::from_str(text)?;
    if file.checks.is_empty() {
        return Err(CudError::Config("fixture file has no checks".into()));
    }
    Ok(file)
}

pub fn run_checks(file: &FixtureFile) -> Vec<Outcome> {
    file.checks.iter().map(run_check).collect()
}

fn run_check(check: &Check) -> Outcome {
    let result = evaluate(&check.op, &check.args);
    let (passed, detail) = match (result, check.expect_error, &check.expect) {
        (Err(e), true, _) => (true, format!("error as expected ({e})")),
        (Ok(v), true, _) => (false, format!("expected an error, got {v}")),
        (Err(e), false, _) => (false, format!("unexpected error: {e}")),
        (Ok(_), false, None) => (false, "fixture has neither expect nor expect_error".into()),
        (Ok(got), false, Some(want)) => match compare(&got, want, check.tol) {
            true => (true, format!("{got}")),
            false => (false, format!("got {got}, expected {want} (tol {})", check.tol)),
        },
    };
    Outcome {
        module: check.module.clone(),
        name: check.name.clone(),
        passed,
        detail,
    }
}

fn compare(got: &Value, want: &Value, tol: f64) -> bool {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
            (a - b).abs() <= tol
        }
        (Value::Array(a), Value::Array(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| compare(x, y, tol)),
        (a, b) => a == b,
    }
}

fn arg<T: serde::de::DeserializeOwned>(args: &Value, key: &str) -> Result<T> {
    let v = args
        .get(key)
        .ok_or_else(|| CudError::Config(format!("fixture argument {key:?} missing")))?;
    serde_json::from_value(v.clone()).map_err(|e| CudError::Config(format!("fixture argument {key:?}: {e}")))
}

fn opt_arg<T: serde::de::DeserializeOwned>(args: &Value, key: &str) -> Result<Option<T>> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(_) => arg(args, key).map(Some),
    }
}

fn num(x: f64) -> Value {
    serde_json::json!(x)
}

fn vec_value(v: &[f64]) -> Value {
    serde_json::json!(v)
}

fn dist(args: &Value, key: &str) -> Result<Distribution> {
    Distribution::new(arg(args, key)?)
}

fn logits(args: &Value, key: &str) -> Result<Logits> {
    Logits::new(arg(args, key)?)
}

/// Records from parallel `conf` / `correct` lists, as two-class distributions.
fn confidence_records(args: &Value) -> Result<Vec<PredictionRecord>> {
    let conf: Vec<f64> = arg(args, "conf")?;
    let correct: Vec<bool> = arg(args, "correct")?;
    conf.iter()
        .zip(&correct)
        .map(|(&c, &ok)| PredictionRecord::new(Distribution::new(vec![c, 1.0 - c])?, Some(if ok { 0 } else { 1 })))
        .collect()
}

fn evaluate(op: &str, a: &Value) -> Result<Value> {
    Ok(match op {
        "softmax" => vec_value(simplex::softmax(&logits(a, "logits")?, arg(a, "temperature")?)?.probs()),
        "resoften" => vec_value(simplex::resoften(&dist(a, "dist")?, arg(a, "temperature")?)?.probs()),
        "entropy" => num(simplex::entropy(&dist(a, "dist")?)),
        "kl_divergence" => num(simplex::kl_divergence(&dist(a, "p")?, &dist(a, "q")?)?),
        "w_clip" => {
            let params = WClipParams {
                eta: arg(a, "eta")?,
                margin_scale_m: arg(a, "m")?,
            };
            vec_value(calibrate::w_clip(&dist(a, "dist")?, arg(a, "label")?, &params)?.dist.probs())
        }
        "exact_tilt" => {
            let (t, s) = calibrate::exact_tilt_projection(&dist(a, "dist")?, arg(a, "wrong")?, arg(a, "budget")?)?;
            let mut out = t.dist.into_vec();
            out.push((-s.nu).exp());
            vec_value(&out)
        }
        "temperature_scale" => {
            vec_value(calibrate::temperature_scale(&logits(a, "logits")?, arg(a, "temperature")?)?.dist.probs())
        }
        "label_smooth" => {
            vec_value(calibrate::label_smooth(arg(a, "label")?, arg(a, "classes")?, arg(a, "eps")?)?.dist.probs())
        }
        "cross_entropy" => num(losses::cross_entropy(&dist(a, "dist")?, arg(a, "label")?)?),
        "focal_term" => num(losses::focal_term(
            &dist(a, "dist")?,
            arg(a, "label")?,
            arg(a, "alpha")?,
            arg(a, "gamma")?,
        )?),
        "difficulty_gate" => {
            let params: DusParams = opt_arg(a, "params")?.unwrap_or_default();
            num(losses::difficulty_gate(arg(a, "p_y")?, &params)?)
        }
        "teacher_loss" => {
            let params: DusParams = opt_arg(a, "params")?.unwrap_or_default();
            num(losses::teacher_loss(&logits(a, "logits")?, arg(a, "label")?, &params)?)
        }
        "student_loss" => {
            let params: KdParams = opt_arg(a, "params")?.unwrap_or_default();
            let target = calibrate::CalibratedTarget::identity(dist(a, "target")?);
            num(losses::student_loss(&logits(a, "logits")?, &target, opt_arg(a, "label")?, &params)?)
        }
        "forward" => {
            let layers: Vec<(Vec<f64>, Vec<f64>)> = arg(a, "layers")?;
            let dims: Vec<usize> = arg(a, "layer_dims")?;
            let layers = layers
                .into_iter()
                .zip(dims.windows(2))
                .map(|((weights, bias), w)| Layer {
                    in_dim: w[0],
                    out_dim: w[1],
                    weights,
                    bias,
                })
                .collect();
            let m = MlpClassifier::from_layers(layers)?;
            let x: Vec<f64> = arg(a, "x")?;
            vec_value(m.forward(&x)?.as_slice())
        }
        "lr_schedule" => num(model::lr_schedule(arg(a, "step")?, arg(a, "total")?, arg(a, "base")?)),
        "split_sizes" => {
            let labels: Vec<usize> = arg(a, "labels")?;
            let classes = labels.iter().max().map_or(1, |m| m + 1);
            let features = labels.iter().map(|&y| vec![y as f64]).collect();
            let d = Dataset::new(features, labels, classes, "fixture")?;
            let parts = data::split_indices(&d, arg(a, "fractions")?, arg(a, "seed")?)?;
            serde_json::json!(parts.iter().map(Vec::len).collect::<Vec<_>>())
        }
        "ece" => num(metrics::ece(&confidence_records(a)?, arg(a, "bins")?)?.0),
        "ece_wrong" => match metrics::ece_wrong(&confidence_records(a)?, arg(a, "bins")?)? {
            Some(v) => num(v),
            None => Value::Null,
        },
        "brier" => {
            let items: Vec<(Vec<f64>, usize)> = arg(a, "records")?;
            let recs = items
                .into_iter()
                .map(|(p, y)| PredictionRecord::new(Distribution::new(p)?, Some(y)))
                .collect::<Result<Vec<_>>>()?;
            num(metrics::brier(&recs)?)
        }
        "auroc" => num(metrics::roc_auroc(&arg::<Vec<f64>>(a, "scores")?, &arg::<Vec<bool>>(a, "positive")?)?.auroc),
        "fpr_at_tpr" => {
            let curve = match opt_arg::<Vec<(f64, f64)>>(a, "points")? {
                Some(points) => RocCurve { points, auroc: f64::NAN },
                None => metrics::roc_auroc(&arg::<Vec<f64>>(a, "scores")?, &arg::<Vec<bool>>(a, "positive")?)?,
            };
            num(metrics::fpr_at_tpr(&curve, arg(a, "level")?)?)
        }
        other => return Err(CudError::Config(format!("unknown fixture op {other:?}"))),
    })
}
