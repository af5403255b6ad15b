//! Plain-text `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, keys are dotted paths
//! (`task.shots`, `main.alpha`). Every key has a built-in default, so a
//! config file only states what it changes; unknown keys are rejected
//! to catch typos.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Parsed key/value assignments from one config file.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    source: Option<PathBuf>,
    entries: BTreeMap<String, String>,
    /// Keys read so far, to report typos at the end.
    consumed: std::cell::RefCell<Vec<String>>,
}

impl KeyValues {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut kv = Self::parse(&text).map_err(|detail| Error::MalformedFile {
            path: path.to_path_buf(),
            detail,
        })?;
        kv.source = Some(path.to_path_buf());
        Ok(kv)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(format!("line {}: empty key", lineno + 1));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        Ok(KeyValues {
            source: None,
            entries,
            consumed: Default::default(),
        })
    }

    /// Overrides or inserts an assignment (CLI flags beat file values).
    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().push(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    fn parse_error(&self, key: &str, what: &str, value: &str) -> Error {
        Error::InvalidConfig(format!(
            "key `{key}`: `{value}` is not a valid {what}{}",
            self.source
                .as_ref()
                .map(|p| format!(" (in {})", p.display()))
                .unwrap_or_default()
        ))
    }

    pub fn get_string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.parse_error(key, "integer", v)),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.parse_error(key, "integer", v)),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| self.parse_error(key, "number", v)),
        }
    }

    /// Comma-separated list of integers.
    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|_| self.parse_error(key, "integer list", v))
                })
                .collect(),
        }
    }

    pub fn get_u64_list(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|_| self.parse_error(key, "integer list", v))
                })
                .collect(),
        }
    }

    pub fn get_string_list(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.raw(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(v) if v.is_empty() => Vec::new(),
            Some(v) => v.split(',').map(|part| part.trim().to_string()).collect(),
        }
    }

    /// Fails if the file holds keys nothing asked for.
    pub fn reject_unknown_keys(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self
            .entries
            .keys()
            .filter(|k| !consumed.contains(k))
            .collect();
        if let Some(first) = unknown.first() {
            return Err(Error::InvalidConfig(format!(
                "unknown config key `{first}`{}",
                self.source
                    .as_ref()
                    .map(|p| format!(" (in {})", p.display()))
                    .unwrap_or_default()
            )));
        }
        Ok(())
    }
}
