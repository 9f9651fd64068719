//! Layered configuration for the experiment commands.
//!
//! Precedence, lowest first: built-in defaults, `CLARION_SEED`, the JSON
//! file given by `--config`, then `--key value` flags. Keys are the JSON
//! field names; nested fields use dots (`--encoder.widths 8,16,32`) and
//! dashes are accepted for underscores (`--label-fraction`).

use std::path::PathBuf;

use clarion::trainer::TrainConfig;
use serde_json::Value;

#[derive(Debug)]
pub struct UsageError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

const PATH_KEYS: [&str; 2] = ["manifest", "out"];

pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub manifest: PathBuf,
    pub out: PathBuf,
    effective: Value,
}

impl ResolvedConfig {
    /// Every resolved key, including data paths and command extras.
    pub fn effective_json(&self) -> String {
        serde_json::to_string_pretty(&self.effective).expect("json value")
    }

    pub fn extra_list(&self, key: &str) -> Result<Vec<String>, UsageError> {
        match &self.effective[key] {
            Value::Array(items) => Ok(items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect()),
            other => err(format!("{key} must be a list, got {other}")),
        }
    }
}

/// `--config` path and the remaining `(key, value)` pairs.
type Flags = (Option<PathBuf>, Vec<(String, String)>);

fn parse_flags(args: &[String], extras: &[(&str, Value)]) -> Result<Flags, UsageError> {
    let mut config = None;
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        if arg == "-h" || arg == "--help" {
            print_help(extras);
            std::process::exit(0);
        }
        let Some(flag) = arg.strip_prefix("--") else {
            return err(format!("unexpected argument {arg:?}; expected --key value"));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => match it.next() {
                Some(v) => (flag.to_string(), v.clone()),
                None => return err(format!("--{flag} needs a value")),
            },
        };
        let key = key.replace('-', "_");
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            pairs.push((key, value));
        }
    }
    Ok((config, pairs))
}

fn print_help(extras: &[(&str, Value)]) {
    let mut keys = Vec::new();
    collect_keys(&defaults(extras), "", &mut keys);
    println!("usage: --manifest FILE --out DIR [--config FILE] [--key value ...]\n\nkeys:");
    for (k, v) in keys {
        println!("  --{k} (default {v})");
    }
}

fn collect_keys(v: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            if child.is_object() {
                collect_keys(child, &path, out);
            } else {
                out.push((path, child.to_string()));
            }
        }
    }
}

fn defaults(extras: &[(&str, Value)]) -> Value {
    let mut base = serde_json::to_value(TrainConfig::default()).expect("config serializes");
    let map = base.as_object_mut().expect("object");
    for k in PATH_KEYS {
        map.insert(k.to_string(), Value::Null);
    }
    for (k, v) in extras {
        map.insert(k.to_string(), v.clone());
    }
    base
}

/// Deep-merges `src` into `dst`, rejecting keys `dst` does not have.
fn merge(dst: &mut Value, src: &Value, path: &str) -> Result<(), UsageError> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let child = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match d.get_mut(k) {
                    Some(slot) => merge(slot, v, &child)?,
                    None => return err(format!("unknown config key {child:?}")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

/// Converts a flag string to the JSON type of the value it replaces.
fn coerce(existing: &Value, raw: &str, key: &str) -> Result<Value, UsageError> {
    let bad = || UsageError(format!("--{key}: cannot use {raw:?} here (current value {existing})"));
    Ok(match existing {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => match raw.parse::<u64>() {
            Ok(v) => Value::from(v),
            Err(_) => Value::from(raw.parse::<f64>().map_err(|_| bad())?),
        },
        Value::Number(_) => Value::from(raw.parse::<f64>().map_err(|_| bad())?),
        Value::Array(items) if !raw.trim_start().starts_with('[') => {
            let template = items.first().cloned().unwrap_or(Value::String(String::new()));
            let parts = raw.split(',').map(str::trim).filter(|s| !s.is_empty());
            Value::Array(parts.map(|p| coerce(&template, p, key)).collect::<Result<_, _>>()?)
        }
        Value::Array(_) | Value::Object(_) => serde_json::from_str(raw).map_err(|_| bad())?,
        Value::String(_) | Value::Null => Value::String(raw.to_string()),
    })
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<(), UsageError> {
    let mut slot = root;
    for part in key.split('.') {
        slot = match slot.as_object_mut().and_then(|m| m.get_mut(part)) {
            Some(s) => s,
            None => return err(format!("unknown config key {key:?}")),
        };
    }
    *slot = coerce(slot, raw, key)?;
    Ok(())
}

pub fn resolve(
    args: &[String],
    env_seed: Option<&str>,
    extras: &[(&str, Value)],
) -> Result<ResolvedConfig, UsageError> {
    let (config_file, pairs) = parse_flags(args, extras)?;
    let mut effective = defaults(extras);
    if let Some(seed) = env_seed {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("CLARION_SEED={seed:?} is not an unsigned integer")))?;
        effective["seed"] = Value::from(seed);
    }
    if let Some(path) = config_file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !file.is_object() {
            return err("config file must hold a JSON object");
        }
        merge(&mut effective, &file, "")?;
    }
    for (key, raw) in &pairs {
        set_path(&mut effective, key, raw)?;
    }

    let mut train_value = effective.clone();
    let map = train_value.as_object_mut().expect("object");
    let mut paths = Vec::new();
    for k in PATH_KEYS {
        match map.remove(k) {
            Some(Value::String(s)) => paths.push(PathBuf::from(s)),
            _ => return err(format!("--{k} is required")),
        }
    }
    for (k, _) in extras {
        map.remove(*k);
    }
    let train: TrainConfig =
        serde_json::from_value(train_value).map_err(|e| UsageError(format!("invalid config: {e}")))?;
    train.validate().map_err(|e| UsageError(e.to_string()))?;
    let out = paths.pop().expect("two path keys");
    let manifest = paths.pop().expect("two path keys");
    Ok(ResolvedConfig {
        train,
        manifest,
        out,
        effective,
    })
}
