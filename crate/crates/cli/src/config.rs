//! Flag / config-file merging. Every subcommand's arguments are `Option`s;
//! values given on the command line win over the JSON config file, which
//! wins over the built-in defaults applied afterwards.

use std::path::PathBuf;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct Common {
    /// Master random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON file with default values for this subcommand's flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Common {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Overlays the command-line values onto the config file named by
/// `config`, if any. Unknown keys in the file are rejected.
pub fn merge<T>(cli: T, config: Option<&PathBuf>) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let Some(path) = config else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(mut base) = file else {
        return Err(CliError::Config(format!(
            "{} must hold a JSON object",
            path.display()
        )));
    };
    let known = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    if let Some(bad) = base.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Config(format!(
            "unknown key {bad:?} in {}",
            path.display()
        )));
    }
    if let Value::Object(flags) = serde_json::to_value(&cli)? {
        for (k, v) in flags {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
