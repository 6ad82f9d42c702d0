//! `manifest.json`: the resolved settings of a run, enough to replay it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Resolved settings of the command.
    pub config: Value,
    /// Input locations, as given on the command line.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub inputs: Value,
    /// Resolved hyperparameters, for fits.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub hyperparameters: Value,
    /// One entry per grid point, for fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_diagnostics: Option<Vec<Value>>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: impl Serialize) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config).expect("settings serialize"),
            inputs: Value::Null,
            hyperparameters: Value::Null,
            grid_diagnostics: None,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(FILE_NAME);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Reads a manifest and checks it was written by `command`.
    pub fn read(path: &Path, command: &str) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.command != command {
            return Err(CliError::Usage(format!(
                "{} was written by `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        Ok(m)
    }

    /// The stored settings, for use as the base layer of a replay.
    pub fn settings<T: serde::de::DeserializeOwned>(&self) -> CliResult<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| CliError::Data(format!("manifest settings do not parse: {e}")))
    }

    pub fn input(&self, key: &str) -> Option<String> {
        self.inputs.get(key).and_then(Value::as_str).map(str::to_string)
    }
}
