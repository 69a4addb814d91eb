//! `key=value` text blocks used for configuration snapshots.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses lines of `key=value`; blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {:?}", k.trim())));
        }
    }
    Ok(out)
}

/// Removes and parses `key` if present.
pub fn take<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()>
where
    T::Err: Display,
{
    if let Some(v) = map.remove(key) {
        *slot = v.parse().map_err(|e| Error::Config(format!("{key}={v}: {e}")))?;
    }
    Ok(())
}

/// Removes and parses a comma-separated list.
pub fn take_list<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str, slot: &mut Vec<T>) -> Result<()>
where
    T::Err: Display,
{
    if let Some(v) = map.remove(key) {
        *slot = v
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| Error::Config(format!("{key}={v}: {e}"))))
            .collect::<Result<_>>()?;
    }
    Ok(())
}

/// Fails if any key was not consumed.
pub fn finish(map: BTreeMap<String, String>) -> Result<()> {
    match map.keys().next() {
        Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
        None => Ok(()),
    }
}

pub fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
