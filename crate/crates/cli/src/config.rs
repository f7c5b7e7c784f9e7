//! Run configuration: a TOML document with `[model]` and `[train]` sections
//! (or equivalent dotted keys such as `model.scale = 4`), layered over a
//! built-in profile and then over `--override key=value` pairs.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use toml::{Table, Value};
use xrds::trainer::TrainConfig;

const SECTIONS: [&str; 2] = ["train", "model"];

fn profile_table(profile: &str) -> Result<Table, String> {
    let base = TrainConfig::profile(profile).map_err(|e| e.to_string())?;
    let mut train = Table::try_from(&base).map_err(|e| e.to_string())?;
    let model = train.remove("model").expect("train config embeds the model");
    let mut root = Table::new();
    root.insert("train".into(), Value::Table(train));
    root.insert("model".into(), model);
    Ok(root)
}

fn merge(dst: &mut Table, src: Table, prefix: &str) -> Result<(), String> {
    for (k, v) in src {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s, &key)?,
            (_, Value::Table(_)) if prefix.is_empty() => return Err(format!("unknown section `{key}`")),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `section.key=value` override.
fn apply_override(root: &mut Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` must look like key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.len() < 2 || !SECTIONS.contains(&parts[0]) {
        return Err(format!("override key `{key}` must start with `train.` or `model.`"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = match table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(format!("override key `{key}` descends into a scalar")),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn finish(mut root: Table) -> Result<TrainConfig, String> {
    if let Some(extra) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(format!("unknown top-level key `{extra}` (expected [train] and [model])"));
    }
    let mut train = match root.remove("train") {
        Some(Value::Table(t)) => t,
        _ => return Err("`train` must be a table".into()),
    };
    if train.contains_key("model") {
        return Err("unknown key `train.model` (use the [model] section)".into());
    }
    let model = root.remove("model").unwrap_or_else(|| Value::Table(Table::new()));
    train.insert("model".into(), model);
    let cfg = TrainConfig::deserialize(Value::Table(train)).map_err(|e| format!("invalid config: {e}"))?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Resolves profile defaults, then the optional file, then overrides.
pub fn resolve(profile: &str, file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig, String> {
    let mut root = profile_table(profile)?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let doc: Table = toml::from_str(&text).map_err(|e| format!("cannot parse config {}: {e}", path.display()))?;
        merge(&mut root, doc, "")?;
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    finish(root)
}

/// The effective configuration as a TOML document.
pub fn render(cfg: &TrainConfig) -> String {
    let mut train = Table::try_from(cfg).expect("config serializes");
    let model = train.remove("model").expect("model section");
    let mut root = Table::new();
    root.insert("train".into(), Value::Table(train));
    root.insert("model".into(), model);
    toml::to_string(&root).expect("table serializes")
}
