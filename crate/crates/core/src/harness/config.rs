//! `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; values may be wrapped in
//! double quotes. Later lines override earlier ones.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Every key the command-line front end understands.
pub const KNOWN_KEYS: &[&str] = &[
    // scene and dataset
    "object_count",
    "view_count",
    "image_size",
    "fov_degrees",
    "ring_radius",
    "ring_height",
    "arc_degrees",
    // training
    "representation",
    "learning_rate",
    "iterations",
    "batch_size",
    "samples",
    "near",
    "far",
    "grid_resolution",
    "gaussian_count",
    "log_every",
    // densification
    "rounds",
    "target_multiplier",
    "keep_fraction",
    "initial_iterations",
    "round_iterations",
    "enhancer",
    "endpoint",
    "timeout_ms",
    "retries",
    "fallback",
    "max_in_flight",
    // duos
    "subset_fraction",
    "noise_std",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            entries.insert(key.to_string(), value.to_string());
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    /// Overwrites `slot` when the key is present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_overrides() {
        let cfg = ConfigFile::parse("# header\niterations = 10\nenhancer = \"oracle\" # trailing\n\niterations=20\n").unwrap();
        assert_eq!(cfg.get::<usize>("iterations").unwrap(), Some(20));
        assert_eq!(cfg.raw("enhancer"), Some("oracle"));
        assert_eq!(cfg.get::<f64>("near").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(ConfigFile::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(ConfigFile::parse("iterations"), Err(Error::Config(_))));
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg = ConfigFile::parse("iterations = many").unwrap();
        let mut n = 3usize;
        assert!(matches!(cfg.set("iterations", &mut n), Err(Error::Config(_))));
        assert_eq!(n, 3);
    }
}
