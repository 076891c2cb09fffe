//! Experiment configuration files and their validation.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tailchain::models::{BuiltModel, ModelConfig};

/// A model given by builtin name or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin(String),
    Inline(ModelConfig),
}

impl ModelRef {
    pub fn resolve(&self) -> anyhow::Result<ModelConfig> {
        match self {
            Self::Inline(cfg) => Ok(cfg.clone()),
            Self::Builtin(name) => ModelConfig::builtin(name).with_context(|| {
                format!(
                    "unknown builtin model '{name}' (known: {})",
                    ModelConfig::BUILTIN_NAMES.join(", ")
                )
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Builtin(name) => name.clone(),
            Self::Inline(ModelConfig::Ar1 { .. }) => "ar1".into(),
            Self::Inline(ModelConfig::Kesten { .. }) => "kesten".into(),
        }
    }
}

fn default_n() -> usize {
    200_000
}
fn default_thresholds() -> Vec<f64> {
    vec![95.0, 99.0, 99.5]
}
fn default_horizon() -> usize {
    2
}
fn default_paths() -> usize {
    20_000
}
fn default_windows() -> usize {
    1000
}
fn default_permutations() -> usize {
    tailchain::diagnostics::DEFAULT_PERMUTATIONS
}
fn default_level() -> f64 {
    0.001
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: simulate, extract windows, sample the tail chain, compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelRef,
    pub seed: u64,
    /// Trajectory length after burn-in.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Defaults to the model's own burn-in.
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// Threshold percentiles of `‖X_t‖`, increasing.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub s: usize,
    #[serde(default = "default_horizon")]
    pub t: usize,
    #[serde(default = "default_paths")]
    pub bftc_paths: usize,
    /// Windows per threshold entering the two-sample comparison.
    #[serde(default = "default_windows")]
    pub max_windows: usize,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    /// A gated check fails when its p-value is at most this level.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn build_model(&self) -> anyhow::Result<BuiltModel> {
        Ok(self.model.resolve()?.build()?)
    }
}

/// A schema problem located by JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pointer, self.message)
    }
}

const TOP_LEVEL: [&str; 12] = [
    "model",
    "seed",
    "n",
    "burn_in",
    "thresholds",
    "s",
    "t",
    "bftc_paths",
    "max_windows",
    "permutations",
    "level",
    "output_dir",
];

struct Checker {
    out: Vec<Diagnostic>,
}

impl Checker {
    fn push(&mut self, pointer: &str, message: impl Into<String>) {
        self.out.push(Diagnostic {
            pointer: pointer.into(),
            message: message.into(),
        });
    }

    fn uint(&mut self, obj: &serde_json::Map<String, Value>, key: &str, pointer: &str, min: u64) {
        match obj.get(key) {
            None => {}
            Some(Value::Number(n)) if n.as_u64().is_some_and(|v| v >= min) => {}
            Some(_) => self.push(pointer, format!("must be an integer >= {min}")),
        }
    }
}

fn check_model(c: &mut Checker, model: &Value) {
    match model {
        Value::String(name) => {
            if ModelConfig::builtin(name).is_none() {
                c.push(
                    "/model",
                    format!(
                        "unknown builtin model '{name}' (known: {})",
                        ModelConfig::BUILTIN_NAMES.join(", ")
                    ),
                );
            }
        }
        Value::Object(obj) => {
            let before = c.out.len();
            match obj.get("type").and_then(Value::as_str) {
                Some("ar1" | "kesten") => {}
                Some(other) => c.push(
                    "/model/type",
                    format!("unknown model type '{other}' (expected ar1 or kesten)"),
                ),
                None => c.push("/model/type", "missing model type (expected ar1 or kesten)"),
            }
            match obj.get("alpha").and_then(Value::as_f64) {
                Some(a) if a > 0.0 && a.is_finite() => {}
                Some(a) => c.push(
                    "/model/alpha",
                    format!("tail index must be positive and finite, got {a}"),
                ),
                None => c.push("/model/alpha", "missing or non-numeric tail index"),
            }
            match obj.get("d").and_then(Value::as_u64) {
                Some(d) if d >= 1 => {}
                _ => c.push("/model/d", "dimension must be an integer >= 1"),
            }
            if c.out.len() > before {
                return;
            }
            match serde_json::from_value::<ModelConfig>(model.clone()) {
                Err(e) => c.push("/model", e.to_string()),
                Ok(cfg) => {
                    if let Err(e) = cfg.build() {
                        c.push("/model", e.to_string());
                    }
                }
            }
        }
        _ => c.push("/model", "must be a builtin model name or a model object"),
    }
}

/// Schema check of a parsed document; empty iff it is a valid configuration.
pub fn validate_value(doc: &Value) -> Vec<Diagnostic> {
    let mut c = Checker { out: Vec::new() };
    let Some(obj) = doc.as_object() else {
        c.push("", "configuration must be a JSON object");
        return c.out;
    };
    for key in obj.keys() {
        if !TOP_LEVEL.contains(&key.as_str()) {
            c.push(&format!("/{key}"), "unknown field");
        }
    }
    match obj.get("model") {
        None => c.push("/model", "missing required field"),
        Some(m) => check_model(&mut c, m),
    }
    match obj.get("seed") {
        None => c.push(
            "/seed",
            "missing required field (runs need an explicit seed)",
        ),
        Some(v) if v.as_u64().is_some() => {}
        Some(_) => c.push("/seed", "must be an unsigned 64-bit integer"),
    }
    c.uint(obj, "n", "/n", 10);
    c.uint(obj, "s", "/s", 0);
    c.uint(obj, "t", "/t", 0);
    c.uint(obj, "bftc_paths", "/bftc_paths", 2);
    c.uint(obj, "max_windows", "/max_windows", 2);
    c.uint(obj, "permutations", "/permutations", 100);
    if let Some(v) = obj.get("burn_in") {
        if !v.is_null() && v.as_u64().is_none() {
            c.push("/burn_in", "must be a non-negative integer or null");
        }
    }
    if let Some(v) = obj.get("level") {
        match v.as_f64() {
            Some(l) if l > 0.0 && l < 1.0 => {}
            _ => c.push("/level", "must be a number in (0, 1)"),
        }
    }
    if let Some(v) = obj.get("output_dir") {
        if !v.is_string() {
            c.push("/output_dir", "must be a string");
        }
    }
    if let Some(v) = obj.get("thresholds") {
        match v.as_array() {
            Some(a) if !a.is_empty() => {
                let mut prev = f64::NEG_INFINITY;
                for (i, p) in a.iter().enumerate() {
                    match p.as_f64() {
                        Some(x) if x > 0.0 && x < 100.0 && x > prev => prev = x,
                        _ => c.push(
                            &format!("/thresholds/{i}"),
                            "percentiles must be increasing and in (0, 100)",
                        ),
                    }
                }
            }
            _ => c.push("/thresholds", "must be a non-empty array of percentiles"),
        }
    }
    if c.out.is_empty() {
        if let Err(e) = serde_json::from_value::<ExperimentConfig>(doc.clone()) {
            c.push("", e.to_string());
        }
    }
    c.out
}

/// Validates a configuration file. I/O failures are errors; schema problems
/// are returned as diagnostics.
pub fn validate_config(path: &Path) -> anyhow::Result<Vec<Diagnostic>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(doc) => Ok(validate_value(&doc)),
        Err(e) => Ok(vec![Diagnostic {
            pointer: String::new(),
            message: format!("invalid JSON: {e}"),
        }]),
    }
}

pub fn parse_config(text: &str) -> anyhow::Result<ExperimentConfig> {
    let doc: Value = serde_json::from_str(text).context("invalid JSON")?;
    let problems = validate_value(&doc);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        bail!("schema: {}", list.join("; "));
    }
    Ok(serde_json::from_value(doc)?)
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

/// Bundled configuration files, by file name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("ar1_d1.json", include_str!("../configs/ar1_d1.json")),
    (
        "kesten_lognormal.json",
        include_str!("../configs/kesten_lognormal.json"),
    ),
];
