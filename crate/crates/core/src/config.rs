//! Flat `key = value` configuration text.
//!
//! One entry per line; `#` starts a comment and blank lines are ignored.
//! Later entries override earlier ones.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedRow { line: i + 1, reason: format!("expected key = value, got '{line}'") })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::MalformedRow { line: i + 1, reason: "empty key".into() });
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    /// Parses a single `key=value` override.
    pub fn parse_override(s: &str) -> Result<(String, String)> {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("override '{s}' is not key=value")))?;
        Ok((k.trim().to_string(), v.trim().to_string()))
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Applies `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses `value` for `key`, naming both in the error.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad value '{value}' for '{key}'")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("bad value '{value}' for '{key}'"))),
    }
}
