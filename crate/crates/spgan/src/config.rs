//! Training configuration from presets, files and `--set` overrides.

use std::path::Path;

use serde_json::{Map, Value};
use spgan_core::trainer::TrainConfig;

use crate::error::{read, Error, Result};

/// The preset file shipped with the binary.
pub const PRESETS_TOML: &str = include_str!("../configs/presets.toml");

pub fn preset_names() -> Vec<String> {
    presets_table().keys().cloned().collect()
}

fn presets_table() -> Map<String, Value> {
    let v: toml::Value = toml::from_str(PRESETS_TOML).expect("bundled presets parse");
    match serde_json::to_value(v).expect("toml converts to json") {
        Value::Object(m) => m,
        _ => unreachable!("preset file is a table"),
    }
}

/// The named preset as written in the preset file.
pub fn preset(name: &str) -> Result<TrainConfig> {
    from_tree(preset_tree(name)?)
}

/// The preset as a JSON tree. Round-tripping through the typed config
/// restores keys TOML cannot hold, such as `fen.weights = null`.
fn preset_tree(name: &str) -> Result<Value> {
    let mut table = presets_table();
    let raw = table
        .remove(name)
        .ok_or_else(|| Error::Usage(format!("unknown preset {name:?}; available: {}", preset_names().join(", "))))?;
    Ok(serde_json::to_value(from_tree(raw)?).expect("config serializes"))
}

fn from_tree(tree: Value) -> Result<TrainConfig> {
    let config: TrainConfig = serde_json::from_value(tree).map_err(|e| Error::Usage(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Dotted paths of every table and value in a configuration.
pub fn valid_keys(tree: &Value) -> Vec<String> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        if let Value::Object(m) = v {
            for (k, child) in m {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.push(path.clone());
                walk(&path, child, out);
            }
        }
    }
    let mut out = Vec::new();
    walk("", tree, &mut out);
    out
}

/// Parse a `--set` value as TOML, or take it as a bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key v")).expect("toml converts to json"),
        Err(_) => Value::String(raw.into()),
    }
}

/// Apply one `key=value` override to the tree.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let unknown = |tree: &Value| Error::Usage(format!("unknown configuration key {key:?}; valid keys: {}", valid_keys(tree).join(", ")));
    let mut node = &mut *tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let exists = node.as_object().is_some_and(|m| m.contains_key(*part));
        if !exists {
            return Err(unknown(tree));
        }
        let child = node.get_mut(*part).expect("checked above");
        if i + 1 == parts.len() {
            *child = parse_value(raw.trim());
            return Ok(());
        }
        node = child;
    }
    Err(unknown(tree))
}

/// Recursively merge `patch` into `base`, rejecting keys `base` lacks.
fn merge(base: &mut Value, patch: Value, prefix: &str, root: &Value) -> Result<()> {
    let Value::Object(patch) = patch else {
        *base = patch;
        return Ok(());
    };
    for (k, v) in patch {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match base.as_object_mut().and_then(|m| m.get_mut(&k)) {
            Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path, root)?,
            Some(slot) => *slot = v,
            None => return Err(Error::Usage(format!("unknown configuration key {path:?}; valid keys: {}", valid_keys(root).join(", ")))),
        }
    }
    Ok(())
}

/// Read a configuration file: TOML, JSON, or a run manifest whose
/// `config` field holds a snapshot.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::format(path.display().to_string(), "encoding", e.to_string()))?;
    let value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<Value>(&text).map_err(|e| Error::format(path.display().to_string(), "json", e.to_string()))?
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), "toml", e.to_string()))?;
        serde_json::to_value(t).expect("toml converts to json")
    };
    Ok(match value {
        Value::Object(mut m) if m.contains_key("argv") && m.contains_key("config") => m.remove("config").expect("checked"),
        v => v,
    })
}

/// Preset, then the optional file merged over it (or replacing it when
/// complete), then each override.
pub fn resolve(preset_name: &str, file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut tree = preset_tree(preset_name)?;
    if let Some(path) = file {
        let patch = read_config_file(path)?;
        if serde_json::from_value::<TrainConfig>(patch.clone()).is_ok() {
            // A complete snapshot replaces the preset, enum variants included.
            tree = patch;
        } else {
            let root = tree.clone();
            merge(&mut tree, patch, "", &root)?;
        }
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    from_tree(tree)
}
