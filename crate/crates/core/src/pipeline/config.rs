//! Experiment configuration: strict JSON, dotted-path overrides and a stable
//! content hash.
//!
//! Unknown keys are rejected with the closest known key as a suggestion.
//! The config hash is the lowercase hex SHA-256 of the canonical JSON form
//! (object keys sorted, no whitespace, numbers in serde_json's shortest
//! round-trip notation).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::calibrate::WClipParams;
use crate::data::MixtureSpec;
use crate::error::{CudError, Result};
use crate::losses::{DusParams, KdParams};
use crate::metrics::DEFAULT_NUM_BINS;
use crate::model::OptimizerConfig;

use super::DistillMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label_column: String,
}

impl Default for CsvSource {
    fn default() -> Self {
        CsvSource {
            path: PathBuf::from("data.csv"),
            label_column: "label".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub mixture: MixtureSpec,
    /// When set, data is read from this file instead of generated, and OOD
    /// metrics are omitted.
    pub csv: Option<CsvSource>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub ood_shift_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mixture: MixtureSpec::default(),
            csv: None,
            split: [0.6, 0.2, 0.2],
            ood_shift_seed: 1_000_003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Hidden width; 0 means a linear softmax model.
    pub hidden: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Temperature applied to teacher logits by the TS baseline.
    pub ts_temperature: f64,
    /// Smoothing mass of the LS baseline.
    pub ls_epsilon: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            ts_temperature: 1.5,
            ls_epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub num_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            num_bins: DEFAULT_NUM_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: vec![0.0, 3.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub teacher: NetConfig,
    pub student: NetConfig,
    pub dus: DusParams,
    pub kd: KdParams,
    pub wclip: WClipParams,
    pub optim: OptimizerConfig,
    pub baselines: BaselineConfig,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
    pub methods: Vec<DistillMethod>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            teacher: NetConfig {
                hidden: 64,
                epochs: 20,
            },
            student: NetConfig {
                hidden: 8,
                epochs: 20,
            },
            dus: DusParams::default(),
            kd: KdParams::default(),
            wclip: WClipParams::default(),
            optim: OptimizerConfig::default(),
            baselines: BaselineConfig::default(),
            metrics: MetricsConfig::default(),
            sweep: SweepConfig::default(),
            methods: vec![DistillMethod::Lkd, DistillMethod::Cud],
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(CudError::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(CudError::Config("at least one seed is required".into()));
        }
        if self.teacher.epochs == 0 || self.student.epochs == 0 {
            return Err(CudError::Config("epochs must be positive".into()));
        }
        let [tr, va, te] = self.data.split;
        if [tr, va, te].iter().any(|f| !(f.is_finite() && *f >= 0.0)) || tr <= 0.0 || te <= 0.0 {
            return Err(CudError::Config(format!(
                "data.split needs positive train and test fractions, got {:?}",
                self.data.split
            )));
        }
        if self.data.csv.is_none() {
            self.data.mixture.validate()?;
            if self.data.ood_shift_seed == self.data.mixture.seed {
                return Err(CudError::Config(
                    "data.ood_shift_seed must differ from data.mixture.seed".into(),
                ));
            }
        }
        if !(self.baselines.ts_temperature.is_finite() && self.baselines.ts_temperature > 0.0) {
            return Err(CudError::Config("baselines.ts_temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baselines.ls_epsilon) {
            return Err(CudError::Config("baselines.ls_epsilon must lie in [0, 1)".into()));
        }
        if self.metrics.num_bins == 0 {
            return Err(CudError::Config("metrics.num_bins must be positive".into()));
        }
        if self.sweep.gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(CudError::Config("sweep.gammas must be finite and >= 0".into()));
        }
        self.dus.validate()?;
        self.kd.validate()?;
        self.wclip.validate()?;
        self.optim.validate()?;
        Ok(())
    }

    /// Parses JSON text, rejecting unknown keys anywhere in the tree.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        check_known_keys(&value, &schema(), "")?;
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| CudError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CudError::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Applies `key=value` overrides (dotted keys; values parsed as JSON,
    /// falling back to a plain string).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CudError::Config(format!("override {item:?} is not key=value")))?;
            let key = key.trim();
            check_override_key(key)?;
            let parsed = serde_json::from_str(raw.trim())
                .unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            set_path(&mut value, key, parsed);
        }
        Self::from_value(value)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(canonical_json(&serde_json::to_value(self)?))
    }

    pub fn config_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_canonical_json()?.as_bytes())))
    }
}

/// Default config with every optional section filled in: the set of keys a
/// config file may use.
fn schema() -> Value {
    let mut cfg = ExperimentConfig::default();
    cfg.data.csv = Some(CsvSource::default());
    serde_json::to_value(cfg).expect("default config serializes")
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn all_paths(schema: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = schema {
        for (k, v) in map {
            let p = join(prefix, k);
            out.push(p.clone());
            all_paths(v, &p, out);
        }
    }
}

fn suggest(unknown: &str) -> String {
    let mut paths = Vec::new();
    all_paths(&schema(), "", &mut paths);
    let best = paths
        .iter()
        .map(|p| (strsim::jaro_winkler(unknown, p), p))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((score, p)) if score > 0.8 => format!("unknown key {unknown:?}, did you mean {p}?"),
        _ => format!("unknown key {unknown:?}"),
    }
}

fn check_known_keys(value: &Value, schema: &Value, prefix: &str) -> Result<()> {
    let (Value::Object(map), Value::Object(known)) = (value, schema) else {
        return Ok(());
    };
    for (k, v) in map {
        let path = join(prefix, k);
        match known.get(k) {
            Some(s) => check_known_keys(v, s, &path)?,
            None => return Err(CudError::Config(suggest(&path))),
        }
    }
    Ok(())
}

fn check_override_key(key: &str) -> Result<()> {
    let schema = schema();
    let mut node = &schema;
    for part in key.split('.') {
        node = node.get(part).ok_or_else(|| CudError::Config(suggest(key)))?;
    }
    Ok(())
}

fn set_path(value: &mut Value, key: &str, new: Value) {
    let mut node = value;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.get(*part).is_some_and(Value::is_object) {
            node[*part] = Value::Object(Default::default());
        }
        node = node.get_mut(*part).expect("inserted above");
    }
    node[parts[parts.len() - 1]] = new;
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}:", Value::String(k.clone()));
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => {
            let _ = write!(out, "{other}");
        }
    }
}
