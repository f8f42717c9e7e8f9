//! `key = value` configuration files.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    Value {
        line: usize,
        key: String,
        value: String,
    },
    #[error("line {line}: unknown key `{key}`")]
    Unknown { line: usize, key: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, found `{body}`"),
                });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("bad key `{key}`"),
                });
            }
            if entries.insert(key.to_string(), (line, v.trim().to_string())).is_some() {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(KeyValues {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| {
            self.used.borrow_mut().insert(key.to_string());
            v.as_str()
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => {
                self.used.borrow_mut().insert(key.to_string());
                v.parse().map(Some).map_err(|_| ConfigError::Value {
                    line: *line,
                    key: key.to_string(),
                    value: v.clone(),
                })
            }
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Entries under `prefix.`, as `(suffix, line, value)`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, usize, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, (line, v))| {
            let rest = k.strip_prefix(prefix)?.strip_prefix('.')?;
            self.used.borrow_mut().insert(k.clone());
            Some((rest, *line, v.as_str()))
        })
    }

    /// Fails on the first key nothing has read.
    pub fn check_all_used(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (line, _))) => Err(ConfigError::Unknown {
                line: *line,
                key: k.clone(),
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_use() {
        let kv = KeyValues::parse("# c\ntick_ms = 250\nfault.a = path=x\nnoise.roll=0.1\nbogus=1\n").unwrap();
        assert_eq!(kv.get::<u64>("tick_ms").unwrap(), Some(250));
        assert_eq!(kv.with_prefix("fault").count(), 1);
        assert_eq!(kv.with_prefix("noise").next().unwrap().0, "roll");
        assert!(matches!(kv.check_all_used(), Err(ConfigError::Unknown { line: 5, .. })));
    }

    #[test]
    fn errors() {
        assert!(matches!(KeyValues::parse("a = 1\na = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(KeyValues::parse("novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        let kv = KeyValues::parse("n = x").unwrap();
        assert!(matches!(kv.get::<u32>("n"), Err(ConfigError::Value { .. })));
    }
}
