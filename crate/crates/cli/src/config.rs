//! Layered run configuration: defaults, then an optional JSON file, then
//! `--key value` flags.
//!
//! Keys are dotted paths into the command's config (`--train.epochs 5`);
//! dashes become underscores and each command adds short aliases. A flag
//! value is coerced to the type of the value it replaces: comma lists for
//! arrays and tuples, the raw text for strings, JSON otherwise.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{io_err, CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";

/// Raw `(key, value)` flag pairs in command-line order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides(pub Vec<(String, String)>);

impl Overrides {
    pub fn parse(args: &[String]) -> CliResult<Self> {
        let mut out = Vec::new();
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .filter(|k| !k.is_empty())
                .ok_or_else(|| CliError::usage(format!("expected --key, found {flag:?}")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| CliError::usage(format!("--{key} needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            out.push((key.replace('-', "_"), value));
        }
        Ok(Overrides(out))
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Removes every occurrence of `key`, returning the last value.
    pub fn take(&mut self, key: &str) -> Option<String> {
        let last = self.get(key).map(str::to_string);
        self.0.retain(|(k, _)| k != key);
        last
    }
}

pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn merge(dst: &mut Value, src: Value, path: &str) -> CliResult<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(CliError::usage(format!("unknown config key {sub:?}"))),
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s;
            Ok(())
        }
    }
}

fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn coerce(current: &Value, raw: &str) -> CliResult<Value> {
    let raw = raw.trim();
    Ok(match current {
        Value::Array(_) if !raw.starts_with('[') => {
            Value::Array(raw.split(',').map(str::trim).filter(|t| !t.is_empty()).map(scalar).collect())
        }
        Value::String(_) => Value::String(raw.to_string()),
        Value::Object(_) => serde_json::from_str(raw).map_err(|e| CliError::usage(format!("expected a JSON object: {e}")))?,
        _ => scalar(raw),
    })
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> CliResult<()> {
    let mut slot = root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(m) => m.get_mut(part),
            _ => None,
        }
        .ok_or_else(|| CliError::usage(format!("unknown flag --{key}")))?;
    }
    *slot = coerce(slot, raw)?;
    Ok(())
}

/// Defaults, overlaid by `file` and then by `flags` (after alias expansion).
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Value>,
    flags: &Overrides,
    aliases: &[(&str, &str)],
) -> CliResult<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(f) = file {
        if !f.is_object() {
            return Err(CliError::usage("config file must hold a JSON object"));
        }
        merge(&mut v, f.clone(), "")?;
    }
    for (k, raw) in &flags.0 {
        let key = aliases.iter().find(|(a, _)| a == k).map_or(k.as_str(), |(_, p)| p);
        set_path(&mut v, key, raw)?;
    }
    serde_json::from_value(v).map_err(|e| CliError::usage(format!("bad config: {e}")))
}

/// Looks up `key` in the flags, then in the file, as a string.
pub fn peek(file: Option<&Value>, flags: &Overrides, key: &str) -> Option<String> {
    flags.get(key).map(str::to_string).or_else(|| {
        file.and_then(|f| f.get(key)).and_then(|v| match v {
            Value::String(s) => Some(s.clone()),
            _ => None,
        })
    })
}

/// Writes the effective config next to a run's outputs.
pub fn write_config<T: Serialize>(dir: &Path, cfg: &T) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let p = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::usage(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))
}
