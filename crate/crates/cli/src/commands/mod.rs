pub mod cov;
pub mod eval;
pub mod infer;
pub mod otsu;
pub mod synth;
pub mod thickness;
pub mod train;

use std::path::{Path, PathBuf};

use crate::manifest::RunManifest;
use crate::CliError;

pub type Outcome = Result<(RunManifest, PathBuf), CliError>;

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data("io", format!("{}: {e}", dir.display())))
}

pub fn require_exists(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::data("io", format!("{}: no such file or directory", p.display())))
    }
}

/// Files in `dir` in name order, relative to it.
pub fn listing(dir: &Path) -> Result<Vec<String>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::data("io", format!("{}: {e}", dir.display())))?;
    let mut names: Vec<String> = rd
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    Ok(names)
}
