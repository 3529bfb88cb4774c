//! Plain-text key/value configuration with an embedded ASCII-art layout.
//!
//! ```text
//! ; comment
//! horizon = 40
//! xi = 0.5
//! layout:
//! #######
//! #..T..#
//! #######
//! end
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
    layout: Option<Vec<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::default();
        let mut lines = text.lines().enumerate();
        while let Some((no, raw)) = lines.next() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            if line == "layout:" {
                if cfg.layout.is_some() {
                    return Err(Error::Config(format!("line {}: second layout block", no + 1)));
                }
                let mut rows = Vec::new();
                loop {
                    match lines.next() {
                        Some((_, row)) if row.trim() == "end" => break,
                        Some((_, row)) => rows.push(row.trim_end().to_string()),
                        None => return Err(Error::Config("layout block is missing 'end'".into())),
                    }
                }
                cfg.layout = Some(rows);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if cfg.values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
            }
        }
        Ok(cfg)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn layout(&self) -> Option<&[String]> {
        self.layout.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("'{key}' is not a number: '{v}'")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("'{key}' is not a count: '{v}'")))
            })
            .transpose()
    }

    /// Comma-separated list; empty entries are dropped.
    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get_list(key)
            .map(|items| {
                items
                    .iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::Config(format!("'{key}' entry is not a number: '{v}'")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.get_list(key)
            .map(|items| {
                items
                    .iter()
                    .map(|v| {
                        v.parse::<u64>()
                            .map_err(|_| Error::Config(format!("'{key}' entry is not a seed: '{v}'")))
                    })
                    .collect()
            })
            .transpose()
    }
}
