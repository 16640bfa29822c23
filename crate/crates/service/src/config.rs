//! Service configuration: one TOML file plus `UIFEEDBACK_*` environment
//! overrides. `UIFEEDBACK_BIND` sets `bind`; a double underscore descends
//! into a table, so `UIFEEDBACK_BACKENDS__LLM_URL` sets `backends.llm_url`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uifeedback::gateway::BackendProfile;

use crate::error::ServiceError;

pub const ENV_PREFIX: &str = "UIFEEDBACK_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_dir: PathBuf,
    pub bind: String,
    /// Seeds task and match scheduling.
    pub seed: u64,
    /// fsync the manifest after every write.
    pub durable: bool,
    pub backends: BackendProfile,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store_dir: PathBuf::from("uifeedback-store"),
            bind: "127.0.0.1:8080".into(),
            seed: 0,
            durable: true,
            backends: BackendProfile::default(),
        }
    }
}

/// TOML scalar if it parses as one, else a plain string.
fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), ServiceError> {
    let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| ServiceError::Config(format!("{ENV_PREFIX}{key}: `{p}` is not a table")))?;
    }
    cur.insert(last.clone(), env_value(raw));
    Ok(())
}

impl Config {
    /// Parses `text` and applies overrides from `vars` (name, value).
    pub fn from_parts(text: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, ServiceError> {
        let mut table: toml::Table = text.parse().map_err(|e| ServiceError::Config(format!("{e}")))?;
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                if !key.is_empty() {
                    apply_override(&mut table, key, &value)?;
                }
            }
        }
        let config: Config = table.try_into().map_err(|e| ServiceError::Config(format!("{e}")))?;
        config.backends.validate()?;
        Ok(config)
    }

    /// Reads `path` (if given) and the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_parts(&text, std::env::vars())
    }
}
