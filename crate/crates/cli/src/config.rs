//! Flat `key = value` configuration files and precedence resolution.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use crate::ValidationError;

/// Parsed `key = value` pairs. Blank lines and lines starting with `#` are
/// ignored; keys use snake_case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(ValidationError(format!("config line {}: expected `key = value`", i + 1)));
            };
            let k = k.trim().replace('-', "_");
            if k.is_empty() {
                bail!(ValidationError(format!("config line {}: empty key", i + 1)));
            }
            values.insert(k, v.trim().trim_matches('"').to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Value from the file, parsed; `None` if the key is absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| ValidationError(format!("config key `{key}` = {v:?}: {e}")).into()),
        }
    }

    /// CLI flag if given, else the file value, else `default`.
    pub fn resolve<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = cli {
            return Ok(v);
        }
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Like [`ConfigFile::resolve`] without a default.
    pub fn resolve_opt<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        self.get(key)
    }
}

/// Comma-separated list, e.g. `64,64`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| ValidationError(format!("list item {x:?}: {e}")).into()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let c = ConfigFile::parse("# comment\nsteps = 50\nlr=0.01\nmodel = \"dense\"\n\nbatch-size = 8").unwrap();
        assert_eq!(c.resolve::<usize>(None, "steps", 10).unwrap(), 50);
        assert_eq!(c.resolve::<usize>(Some(7), "steps", 10).unwrap(), 7);
        assert_eq!(c.resolve::<usize>(None, "missing", 10).unwrap(), 10);
        assert_eq!(c.get_raw("model"), Some("dense"));
        assert_eq!(c.get::<usize>("batch_size").unwrap(), Some(8));
        assert!(c.get::<usize>("lr").is_err());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("steps 50").is_err());
        assert!(ConfigFile::parse(" = 3").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<f64>("1, 3,10").unwrap(), vec![1.0, 3.0, 10.0]);
        assert!(parse_list::<usize>("1,x").is_err());
    }
}
