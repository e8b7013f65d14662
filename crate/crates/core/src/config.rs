//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored; a `#` after a value
//! starts a trailing comment. Keys are case-sensitive and may appear once.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    name: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: name.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if entries.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(err(format!("duplicate key `{k}`")));
            }
        }
        Ok(Self {
            name: name.to_string(),
            entries,
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn bad(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        let line = self.entries.get(key).map_or(0, |(l, _)| *l);
        Error::Parse {
            path: self.name.clone(),
            line,
            msg: format!("`{key}`: {msg}"),
        }
    }

    /// Parsed value, or `None` when the key is absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.bad(key, e)),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.name.clone(),
            line: 0,
            msg: format!("missing key `{key}`"),
        })
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| self.bad(key, e)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Rejects keys outside `allowed`, catching typos.
    pub fn expect_only(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    path: self.name.clone(),
                    line: *line,
                    msg: format!("unknown key `{k}`"),
                });
            }
        }
        Ok(())
    }
}

/// Penalty grid written as `lo:hi:per_decade` or as an explicit list.
pub fn parse_xi_grid(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].parse().map_err(|_| Error::invalid(format!("bad grid `{raw}`")))?;
        let hi: f64 = parts[1].parse().map_err(|_| Error::invalid(format!("bad grid `{raw}`")))?;
        let per: usize = parts[2].parse().map_err(|_| Error::invalid(format!("bad grid `{raw}`")))?;
        return crate::spatial::xi_grid(lo, hi, per);
    }
    let v = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::invalid(format!("bad grid `{raw}`")))?;
    if v.is_empty() || v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::invalid(format!("bad grid `{raw}`")));
    }
    Ok(v)
}
