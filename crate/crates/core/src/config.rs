//! Plain-text `key = value` configuration with command-line overrides.
//!
//! Blank lines and `#` comments are ignored. Later assignments win, and overrides
//! applied with [`KvConfig::set`] win over anything read from a file. Every key
//! must be consumed by the command that reads it; leftovers are reported as
//! unknown so typos do not silently fall back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse {value:?}: {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("unknown key(s): {0}")]
    Unknown(String),
}

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = KvConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_assignment(line).map_err(|_| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        match assignment.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                self.set(k.trim(), v.trim());
                Ok(())
            }
            _ => Err(ConfigError::Syntax { line: 0, text: assignment.to_string() }),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map_or(Ok(default), |v| parse_value(key, v))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key).ok_or_else(|| ConfigError::Missing(key.to_string()))?;
        parse_value(key, v)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        self.raw(key).map(PathBuf::from).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn path_or(&self, key: &str, default: impl AsRef<Path>) -> PathBuf {
        self.raw(key).map_or_else(|| default.as_ref().to_path_buf(), PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    /// Comma-separated list.
    pub fn list_or<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else { return Ok(default.to_vec()) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_value(key, s))
            .collect()
    }

    /// Fails if any key was never read.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self.entries.keys().filter(|k| !used.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Unknown(unknown.join(", ")))
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.to_string(),
        value: v.to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = KvConfig::parse("# run\na = 1\n\nb=x y # trailing\na = 2\n").unwrap();
        assert_eq!(c.get_or("a", 0u32), Ok(2));
        c.set_assignment("b=z").unwrap();
        assert_eq!(c.raw("b"), Some("z"));
        assert_eq!(c.get_or("missing", 7i64), Ok(7));
        assert!(c.finish().is_ok());
    }

    #[test]
    fn errors() {
        assert_eq!(
            KvConfig::parse("ok = 1\nnot an assignment").unwrap_err(),
            ConfigError::Syntax { line: 2, text: "not an assignment".into() }
        );
        let c = KvConfig::parse("n = abc\ntypo = 3").unwrap();
        assert!(matches!(c.get_or("n", 1usize), Err(ConfigError::Invalid { .. })));
        assert_eq!(c.require::<f64>("absent"), Err(ConfigError::Missing("absent".into())));
        assert_eq!(c.finish(), Err(ConfigError::Unknown("typo".into())));
    }

    #[test]
    fn lists_and_paths() {
        let c = KvConfig::parse("w = 8, 16,32\np = /tmp/x").unwrap();
        assert_eq!(c.list_or("w", &[1usize]), Ok(vec![8, 16, 32]));
        assert_eq!(c.list_or("v", &[0.5f64]), Ok(vec![0.5]));
        assert_eq!(c.path("p"), Ok(PathBuf::from("/tmp/x")));
        assert_eq!(c.path_or("q", "d"), PathBuf::from("d"));
    }
}
