//! Application configuration: a JSON file plus `--set key.path=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use punner_harness::plan::{CorpusSource, ExperimentPlan};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Origin allowed by CORS; `*` allows any.
    pub allow_origin: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080, allow_origin: "*".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    #[serde(flatten)]
    pub plan: ExperimentPlan,
    pub service: ServiceConfig,
    pub out_dir: PathBuf,
}

impl Default for AppConfig {
    fn default() -> Self {
        let mut plan = ExperimentPlan::default();
        plan.eval.beam = 5;
        plan.test_beam = 10;
        Self { plan, service: ServiceConfig::default(), out_dir: PathBuf::from("runs") }
    }
}

impl AppConfig {
    /// Lays `path` over the defaults and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed config {}: {e}", p.display())))?;
            merge(&mut value, file);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let CorpusSource::Files { registry, corpora } = &self.plan.corpora {
            let paths = registry.iter().chain(corpora.iter().flat_map(|c| std::iter::once(&c.train).chain(&c.dev).chain(&c.test)));
            for p in paths {
                if !p.exists() {
                    return Err(CliError::Usage(format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Recursively overwrites `base` with `top`. Objects whose `kind` tag
/// changes are replaced whole.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            if t.get("kind").is_some_and(|k| b.get("kind") != Some(k)) {
                *b = t;
                return;
            }
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

/// Sets `a.b.c=value` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key `{key}`")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| CliError::Usage(format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("the loop returns on the last part")
}
