//! `key = value` configuration files for the command-line front end.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Keys accepted in a configuration file.
pub const KNOWN_KEYS: &[&str] = &[
    "n", "alpha", "d", "model", "side", "trials", "seed", "out", "trace", "workers",
    "d_grid", "d_min", "d_max", "rel_width", "p_g", "p_b", "p_n", "streak", "policy",
    "throws", "c", "instance", "matching",
];

/// Parsed configuration: later lines override earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Parameter(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The value of `key` parsed as `T`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Parameter(format!("config key `{key}` = `{v}`: {e}")))
            })
            .transpose()
    }
}
