use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Effective option values: command-line flag, else `--config` file entry,
/// else default. Every resolved value is recorded for the manifest.
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::data("io", format!("{}: {e}", p.display())))?;
                imrk_core::kv::parse(&text).map_err(|e| CliError::usage(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn pick<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file.remove(key);
        let value = match (flag, from_file) {
            (Some(v), _) => Some(v),
            (None, Some(s)) => Some(
                s.parse()
                    .map_err(|e| CliError::usage(format!("config entry {key}={s}: {e}")))?,
            ),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.pick(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.pick(key, flag)?
            .ok_or_else(|| CliError::usage(format!("missing required option --{key}")))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let s = self.require(key, flag.map(|p| p.display().to_string()))?;
        Ok(PathBuf::from(s))
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.pick(key, flag)
    }

    /// Fails on config entries that no option consumed.
    pub fn finish(self) -> Result<BTreeMap<String, String>, CliError> {
        if let Some(k) = self.file.keys().next() {
            return Err(CliError::usage(format!("unknown config entry {k:?}")));
        }
        Ok(self.resolved)
    }
}
