use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Everything needed to re-run a command: the effective option values, the
/// files read and written, the seed and the tool version.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Effective option values, by long flag name.
    pub settings: BTreeMap<String, String>,
    /// Full configuration snapshots (`key=value` lines) used by the command.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Present only when the run was asked to record timing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, settings: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            settings,
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_ms: None,
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    /// Writes `manifest.json` into `out_dir`.
    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf, CliError> {
        self.outputs.sort();
        self.outputs.dedup();
        let path = out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
