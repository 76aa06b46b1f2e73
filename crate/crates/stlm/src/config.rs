//! Run configuration: one JSON document with sections `model`, `train`,
//! `anomaly`, `data` and `eval`, plus dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use stlm_core::eval::EvalOptions;
use stlm_core::model::ModelConfig;
use stlm_core::synth::{AnomalySpec, DatasetSpec, Generator, PerlinParams, SourceKind};
use stlm_core::train::TrainConfig;

use crate::error::{IoContext, Result, StlmError};

pub const SECTIONS: [&str; 5] = ["model", "train", "anomaly", "data", "eval"];
pub const SEED_ENV: &str = "STLM_SEED";

/// Training-time pseudo-anomaly settings, including the mask noise field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub activation_prob: f64,
    pub beta_range: (f32, f32),
    pub source: SourceKind,
    pub generator: Generator,
    pub perlin: PerlinParams,
    /// PNG directory backing `source = image_directory`.
    pub source_dir: Option<PathBuf>,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        let a = AnomalySpec::default();
        Self {
            activation_prob: a.activation_prob,
            beta_range: a.beta_range,
            source: a.source,
            generator: a.generator,
            perlin: PerlinParams::default(),
            source_dir: None,
        }
    }
}

impl AnomalyConfig {
    pub fn spec(&self) -> AnomalySpec {
        AnomalySpec {
            activation_prob: self.activation_prob,
            beta_range: self.beta_range,
            source: self.source,
            generator: self.generator,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub anomaly: AnomalyConfig,
    pub data: DatasetSpec,
    pub eval: EvalOptions,
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Structural comparison of user JSON against the default document: unknown
/// keys and JSON-type mismatches, each reported with its dotted path.
fn check_shape(user: &Value, reference: &Value, path: &str, errors: &mut Vec<String>) {
    let at = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (user, reference) {
        (_, Value::Null) | (Value::Null, _) => {}
        (Value::Object(u), Value::Object(r)) => {
            for (k, v) in u {
                match r.get(k) {
                    Some(rv) => check_shape(v, rv, &at(k), errors),
                    None => errors.push(format!("{}: unknown key", at(k))),
                }
            }
        }
        (Value::Array(u), Value::Array(r)) => {
            // Every array in the schema is a fixed-size tuple.
            if r.len() != u.len() {
                errors.push(format!("{path}: expected {} elements, got {}", r.len(), u.len()));
            }
            for (i, (v, rv)) in u.iter().zip(r).enumerate() {
                check_shape(v, rv, &format!("{path}[{i}]"), errors);
            }
        }
        (u, r) if kind(u) != kind(r) => errors.push(format!("{path}: expected {}, got {}", kind(r), kind(u))),
        _ => {}
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses an override value: JSON when it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl Config {
    /// Layers the default document, an optional JSON file, `STLM_SEED`
    /// and dotted overrides, then validates. Every problem found is
    /// reported at once, keyed by path.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Config> {
        let reference = serde_json::to_value(Config::default()).expect("default config serializes");
        let mut doc = reference.clone();
        let mut errors = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).at(path)?;
            let user: Value = serde_json::from_str(&text)
                .map_err(|e| StlmError::Config(vec![format!("{}: {e}", path.display())]))?;
            if !user.is_object() {
                return Err(StlmError::Config(vec![format!("{}: top level must be an object", path.display())]));
            }
            check_shape(&user, &reference, "", &mut errors);
            merge(&mut doc, user);
        }
        if let Some(raw) = env_seed {
            match raw.trim().parse::<u64>() {
                Ok(seed) => {
                    doc["train"]["seed"] = seed.into();
                    doc["data"]["seed"] = seed.into();
                }
                Err(_) => errors.push(format!("{SEED_ENV}: `{raw}` is not an unsigned integer")),
            }
        }
        for (key, raw) in overrides {
            let mut slot = Some(&mut doc);
            let mut ref_slot = Some(&reference);
            for part in key.split('.') {
                slot = slot.and_then(|s| s.get_mut(part));
                ref_slot = ref_slot.and_then(|r| r.get(part));
            }
            match (slot, ref_slot) {
                (Some(slot), Some(r)) => {
                    let v = parse_value(raw);
                    let before = errors.len();
                    check_shape(&v, r, key, &mut errors);
                    if errors.len() == before {
                        *slot = v;
                    }
                }
                _ => errors.push(format!("{key}: unknown key")),
            }
        }
        if !errors.is_empty() {
            return Err(StlmError::Config(errors));
        }
        let config: Config = serde_path_to_error::deserialize(doc)
            .map_err(|e| StlmError::Config(vec![format!("{}: {}", e.path(), e.inner())]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut keyed = |section: &str, r: stlm_core::Result<()>| {
            if let Err(e) = r {
                errors.push(match e {
                    stlm_core::Error::InvalidConfig { key, reason } => format!("{key}: {reason}"),
                    other => format!("{section}: {other}"),
                });
            }
        };
        keyed("model", self.model.validate());
        keyed("train", self.train.validate());
        keyed("anomaly", self.anomaly.spec().validate());
        keyed(
            "anomaly.perlin",
            self.anomaly.perlin.validate(self.model.image_size, self.model.image_size),
        );
        keyed("data.perlin", self.data.perlin.validate(self.data.size, self.data.size));
        if self.data.size == 0 || !matches!(self.data.channels, 1 | 3) {
            errors.push("data: size must be ≥ 1 and channels 1 or 3".into());
        }
        if self.data.n_train == 0 {
            errors.push("data.n_train: must be ≥ 1".into());
        }
        let (lo, hi) = self.data.test_beta_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            errors.push("data.test_beta_range: must be an interval inside [0, 1]".into());
        }
        if self.anomaly.source == SourceKind::ImageDirectory && self.anomaly.source_dir.is_none() {
            errors.push("anomaly.source_dir: required when source = image_directory".into());
        }
        if !(self.eval.fpr_limit > 0.0 && self.eval.fpr_limit <= 1.0) {
            errors.push("eval.fpr_limit: must be in (0, 1]".into());
        }
        if self.eval.top_k == Some(0) {
            errors.push("eval.top_k: must be ≥ 1".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(StlmError::Config(errors))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical compact JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::resolve(Some(path), None, &[])
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
