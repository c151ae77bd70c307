//! `key = value` text files: manifests, config files and config snapshots.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored.
//! Keys keep their file order.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut out = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if out.get(k).is_some() {
                return Err(KvError::Duplicate(k.to_string()));
            }
            out.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = self.to_string();
        crate::write_atomic(path, |w| w.write_all(text.as_bytes()))
    }

    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| KvError::Value { key: key.to_string(), value: v.to_string() })
    }
}

impl Display for KvFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
