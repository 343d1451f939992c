//! Plain-text run configuration.
//!
//! One `key = value` pair per line. Blank lines and lines starting with `#`
//! are ignored, as is anything after a `#` on a value line. Keys are
//! case-sensitive; repeating a key is an error. Every key must be consumed by
//! the command that reads the file.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

#[derive(Debug, Default)]
pub struct KeyValues {
    source: String,
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{source}:{}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(UsageError(format!("{source}:{}: empty key", i + 1)).into());
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(UsageError(format!("{source}:{}: duplicate key '{k}'", i + 1)).into());
            }
        }
        Ok(Self {
            source: source.to_string(),
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("{}: key '{key}' = '{v}': {e}", self.source)).into()),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// A path, resolved relative to the config file's directory.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let p: Option<PathBuf> = self.get(key)?;
        let base = Path::new(&self.source).parent().unwrap_or(Path::new(""));
        Ok(p.map(|p| if p.is_absolute() { p } else { base.join(p) }))
    }

    /// Fails on keys nobody asked for, which are almost always typos.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.values.keys().filter(|k| !used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(UsageError(format!("{}: unknown keys {unknown:?}", self.source)))
                .context("checking config keys");
        }
        Ok(())
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let kv = KeyValues::parse("# run\nepochs = 5 # short\n\nloss=positional\n", "t").unwrap();
        assert_eq!(kv.get::<usize>("epochs").unwrap(), Some(5));
        assert_eq!(kv.get::<String>("loss").unwrap().as_deref(), Some("positional"));
        assert_eq!(kv.get_or("seed", 3u64).unwrap(), 3);
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_and_unknown_keys() {
        assert!(KeyValues::parse("epochs 5", "t").is_err());
        assert!(KeyValues::parse("a = 1\na = 2", "t").is_err());
        let kv = KeyValues::parse("epochs = x\ntypo = 1", "t").unwrap();
        assert!(kv.get::<usize>("epochs").is_err());
        assert!(kv.finish().is_err());
    }
}
