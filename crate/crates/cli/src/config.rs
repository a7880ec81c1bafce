//! Config resolution: defaults, then an optional JSON file merged on top,
//! then `--set key.path=value` overrides.

use std::path::Path;

use serde_json::Value;
use uniloc::pipeline::PipelineConfig;
use uniloc::{Error, Result};

/// The defaults profile as a JSON value.
pub fn defaults() -> Value {
    serde_json::to_value(PipelineConfig::default()).expect("default config serializes")
}

/// Merges `patch` into `base`. Keys must already exist in `base` unless the
/// parent there is `null` (an unset optional section).
fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &sub)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(Error::Config(format!("unknown config key '{sub}'"))),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(cfg: &mut Value, arg: &str) -> Result<()> {
    let (key, raw) =
        arg.split_once('=').ok_or_else(|| Error::Config(format!("override '{arg}' is not of the form key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if !known(&defaults(), &parts) {
        return Err(Error::Config(format!("unknown config key '{key}'")));
    }
    let mut node = cfg;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node.as_object_mut().ok_or_else(|| Error::Config(format!("'{key}' descends into a non-object")))?;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one part")
}

/// Whether `parts` names a field of the defaults, or lies under a section
/// that is unset (`null`) there.
fn known(defaults: &Value, parts: &[&str]) -> bool {
    let mut node = defaults;
    for part in parts {
        match node {
            Value::Null => return true,
            Value::Object(o) => match o.get(*part) {
                Some(v) => node = v,
                None => return false,
            },
            _ => return false,
        }
    }
    true
}

/// Resolves the effective config. With no `--config`, `fallback` (usually
/// the work directory's saved config) is used when it exists.
pub fn resolve(file: Option<&Path>, fallback: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut cfg = defaults();
    let source = file.or(fallback.filter(|p| p.exists()));
    if let Some(p) = source {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", p.display())))?;
        merge(&mut cfg, &patch, "")?;
    }
    for o in overrides {
        apply_override(&mut cfg, o)?;
    }
    let cfg: PipelineConfig =
        serde_json::from_value(cfg).map_err(|e| Error::Config(format!("config does not match the schema: {e}")))?;
    cfg.validate()?;
    if let Some(scene) = &cfg.scene {
        if !scene.exists() {
            return Err(Error::Config(format!("scene file {} does not exist", scene.display())));
        }
    }
    Ok(cfg)
}
