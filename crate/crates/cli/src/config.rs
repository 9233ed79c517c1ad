//! Layered configuration: defaults, then a JSON config file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Reads a config file; it must hold a JSON object.
pub fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !v.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    Ok(v)
}

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces what was there.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
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

/// `defaults` with the part of the config file under `section` (or the whole
/// file when `section` is `None`) layered on top.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Value>, section: Option<&str>) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    let part = match (file, section) {
        (Some(f), Some(s)) => f.get(s).cloned(),
        (Some(f), None) => Some(f.clone()),
        (None, _) => None,
    };
    if let Some(p) = part {
        merge(&mut v, p);
    }
    serde_json::from_value(v).with_context(|| match section {
        Some(s) => format!("invalid `{s}` section in config file"),
        None => "invalid config file".to_string(),
    })
}

/// Fails on top-level keys outside `allowed`.
pub fn check_keys(file: Option<&Value>, allowed: &[&str]) -> Result<()> {
    if let Some(Value::Object(m)) = file {
        for k in m.keys() {
            if !allowed.contains(&k.as_str()) {
                bail!("unknown config key `{k}` (expected one of: {})", allowed.join(", "));
            }
        }
    }
    Ok(())
}
