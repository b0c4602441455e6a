//! `key=value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! consumed by a reader before [`KvFile::finish`], so typos surface as errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(Self {
            entries,
            used: BTreeSet::new(),
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Sets a value unless the key is already present.
    pub fn set_default(&mut self, key: &str, value: impl Display) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.insert(key.to_string());
        v.parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("cannot parse {key}={v}")))
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing required key {key}")))
    }

    /// Overwrites `field` when `key` is present.
    pub fn read<T: FromStr>(&mut self, key: &str, field: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *field = v;
        }
        Ok(())
    }

    /// Moves every `prefix`-keyed entry into a new file, prefix stripped.
    pub fn take_prefix(&mut self, prefix: &str) -> KvFile {
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        let mut out = KvFile::default();
        for k in keys {
            let v = self.entries.remove(&k).expect("listed key");
            self.used.remove(&k);
            out.entries.insert(k[prefix.len()..].to_string(), v);
        }
        out
    }

    /// Errors on any key no reader asked for.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "unknown keys: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Renders `key=value` lines.
pub fn render(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
