use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Sidecar record of one command invocation. Contains no timestamps, so
/// re-running the same invocation reproduces it byte for byte.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &'static str, config: impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            command,
            version: simtrans_core::VERSION,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::to_value(config).map_err(|e| CliError::Io(e.to_string()))?,
        })
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Writes the manifest to `<primary>.manifest.json`.
    pub fn write_for(&self, primary: &Path) -> Result<PathBuf, CliError> {
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
