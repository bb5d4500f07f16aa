//! Layered JSON configuration: defaults, then `--config`, then `--set`
//! pairs, then dedicated flags. The merged document is deserialized into the
//! subcommand's config type, which rejects unknown keys.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use ultralong_core::{Error, Result};

/// Keys that select an enum variant; objects that disagree on one of these
/// replace the default instead of merging into it.
const TAG_KEYS: [&str; 3] = ["method", "kind", "mode"];

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override any config key, e.g. `--set model.layers=4`. Values are
    /// parsed as JSON and fall back to plain strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Where to write the effective config (default: next to the main output).
    #[arg(long, value_name = "PATH")]
    pub echo: Option<PathBuf>,
}

/// Flag values collected in key order.
#[derive(Debug, Default)]
pub struct Overrides(Vec<(String, Value)>);

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key.to_string(), serde_json::to_value(v).expect("flag value serializes")));
        }
        self
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let switches = TAG_KEYS
                .iter()
                .any(|k| matches!((b.get(*k), o.get(*k)), (Some(x), Some(y)) if x != y));
            if switches {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            return Err(Error::config(format!("cannot set {key}: {} is not an object", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            let slot = map.entry(part.to_string()).or_insert(Value::Null);
            merge(slot, value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn parse_set(pair: &str) -> Result<(String, Value)> {
    let (k, v) = pair
        .split_once('=')
        .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Builds the effective config for a subcommand.
pub fn resolve<T>(args: &ConfigArgs, overrides: Overrides) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut doc = serde_json::to_value(T::default()).expect("default config serializes");
    if let Some(path) = &args.config {
        let file = read_json(path)?;
        if !file.is_object() {
            return Err(Error::config(format!("{}: config must be a JSON object", path.display())));
        }
        merge(&mut doc, file);
    }
    for pair in &args.set {
        let (k, v) = parse_set(pair)?;
        set_path(&mut doc, &k, v)?;
    }
    for (k, v) in overrides.0 {
        set_path(&mut doc, &k, v)?;
    }
    serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))
}

pub fn echo_path(args: &ConfigArgs, output: &Path) -> PathBuf {
    args.echo.clone().unwrap_or_else(|| {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".config.json");
        output.with_file_name(name)
    })
}

/// Writes `config` as pretty JSON; feeding it back through `--config`
/// reproduces the run.
pub fn write_echo<T: Serialize>(args: &ConfigArgs, output: &Path, config: &T) -> Result<PathBuf> {
    let path = echo_path(args, output);
    write_json(&path, config)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
