//! Flat `key = value` configuration files. Keys are the long flag names of
//! the command (`batch-size`, `filters`, ...); command-line flags win.

use anyhow::{anyhow, bail, Context, Result};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", i + 1))?;
            let key = normalize(key);
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            if values.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                bail!("line {}: duplicate key {key:?}", i + 1);
            }
        }
        Ok(ConfigFile {
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        Self::parse(&text).with_context(|| format!("{}", path.display()))
    }

    /// Fills `slot` from `key` unless a flag already set it.
    pub fn fill<T>(&self, slot: &mut Option<T>, key: &str) -> Result<()>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let Some((line, raw)) = self.values.get(key) else {
            return Ok(());
        };
        self.used.borrow_mut().insert(key.to_string());
        if slot.is_none() {
            let value = raw.parse().map_err(|e| anyhow!("line {line}: {key} = {raw:?}: {e}"))?;
            *slot = Some(value);
        }
        Ok(())
    }

    /// Fails on keys that no option of the command consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .values
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("line {line}: unknown key {k:?}"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            bail!(unknown.join("\n"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_unknown_keys_fail() {
        let cfg = ConfigFile::parse("# comment\nfilters = 34\nbatch_size=8\n\nlr = 0.001\n").unwrap();
        let mut filters = Some(17usize);
        let mut batch: Option<usize> = None;
        cfg.fill(&mut filters, "filters").unwrap();
        cfg.fill(&mut batch, "batch-size").unwrap();
        assert_eq!((filters, batch), (Some(17), Some(8)));
        assert!(cfg.finish().unwrap_err().to_string().contains("lr"));
        let mut lr: Option<f64> = None;
        cfg.fill(&mut lr, "lr").unwrap();
        assert_eq!(lr, Some(0.001));
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("filters 17").is_err());
        assert!(ConfigFile::parse("a=1\na=2").is_err());
        let cfg = ConfigFile::parse("epochs = many").unwrap();
        let mut epochs: Option<usize> = None;
        assert!(cfg.fill(&mut epochs, "epochs").is_err());
    }
}
