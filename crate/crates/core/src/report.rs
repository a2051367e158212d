//! Machine-readable report files: UTF-8, one `key<TAB>value` per line.
//!
//! Keys are unique and keep insertion order. Values may not contain TAB or
//! newline characters; floats are written in Rust's shortest round-trip form
//! so that `parse(emit(x)) == x` holds exactly.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {0}: expected `key<TAB>value`")]
    Syntax(usize),
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("invalid value `{value}` for key `{key}`")]
    Invalid { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvReport {
    entries: Vec<(String, String)>,
}

impl KvReport {
    /// Appends an entry. Panics on TAB/newline in key or value, or on a
    /// duplicate key; both indicate a programming error in the caller.
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        assert!(
            !key.contains(['\t', '\n', '\r']) && !value.contains(['\t', '\n', '\r']),
            "report entries may not contain TAB or newline: {key:?}"
        );
        assert!(self.get(&key).is_none(), "duplicate report key {key}");
        self.entries.push((key, value));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parse<V: FromStr>(&self, key: &str) -> Result<V, KvError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| KvError::Invalid {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    pub fn emit(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }

    pub fn parse_text(text: &str) -> Result<Self, KvError> {
        let mut report = KvReport::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or(KvError::Syntax(i + 1))?;
            if k.is_empty() || v.contains('\t') {
                return Err(KvError::Syntax(i + 1));
            }
            if report.get(k).is_some() {
                return Err(KvError::Duplicate(k.to_string()));
            }
            report.entries.push((k.to_string(), v.to_string()));
        }
        Ok(report)
    }
}

impl FromStr for KvReport {
    type Err = KvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_text(s)
    }
}
