//! Flat `key = value` run configuration files.
//!
//! One assignment per line; `#` starts a comment (full-line, or inline when
//! preceded by whitespace); keys are lowercase `[a-z0-9_]+`. Every typed
//! accessor names the offending key and value on failure, and commands
//! reject keys they do not understand, so a typo dies loudly instead of
//! silently running with defaults. All parse failures are usage errors
//! (exit code 2).

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// A parsed configuration: key to (value, source line).
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
    /// Display name of the source, used in error messages.
    source: String,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Strip an inline comment: a `#` at the start or preceded by whitespace.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

impl ConfigMap {
    pub fn empty() -> ConfigMap {
        ConfigMap::default()
    }

    pub fn parse(text: &str, source: &str) -> Result<ConfigMap> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Usage(format!(
                    "config {source} line {lineno}: expected 'key = value', got '{line}'"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !valid_key(key) {
                return Err(Error::Usage(format!(
                    "config {source} line {lineno}: key '{key}' must be lowercase [a-z0-9_]+"
                )));
            }
            if value.is_empty() {
                return Err(Error::Usage(format!(
                    "config {source} line {lineno}: key '{key}' has an empty value"
                )));
            }
            if let Some((_, first)) = entries.get(key) {
                return Err(Error::Usage(format!(
                    "config {source} line {lineno}: key '{key}' already set on line {first}"
                )));
            }
            entries.insert(key.to_string(), (value.to_string(), lineno));
        }
        Ok(ConfigMap { entries, source: source.to_string() })
    }

    pub fn load(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        ConfigMap::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on any key outside `allowed` so typos cannot pass silently.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> =
            self.keys().filter(|k| !allowed.contains(k)).collect();
        if unknown.is_empty() {
            return Ok(());
        }
        let mut msg = format!(
            "config {}: unknown key{} {}",
            if self.source.is_empty() { "<empty>" } else { &self.source },
            if unknown.len() == 1 { "" } else { "s" },
            unknown.join(", ")
        );
        let _ = write!(msg, " (known: {})", allowed.join(", "));
        Err(Error::Usage(msg))
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.str(key).unwrap_or(default).to_string()
    }

    fn parse_with<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => f(v).map(Some).ok_or_else(|| {
                Error::Usage(format!("config key '{key}': expected {what}, got '{v}'"))
            }),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, "an unsigned integer", |v| v.parse().ok())
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.u64(key)?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, "an unsigned integer", |v| v.parse().ok())
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize(key)?.unwrap_or(default))
    }

    pub fn u8_or(&self, key: &str, default: u8) -> Result<u8> {
        Ok(self.parse_with(key, "an integer in 0..=255", |v| v.parse().ok())?.unwrap_or(default))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, "a number", |v| v.parse().ok())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self
            .parse_with(key, "a boolean (true/false/yes/no/on/off/1/0)", |v| {
                match v.to_ascii_lowercase().as_str() {
                    "true" | "yes" | "on" | "1" => Some(true),
                    "false" | "no" | "off" | "0" => Some(false),
                    _ => None,
                }
            })?
            .unwrap_or(default))
    }

    /// Comma-separated unsigned integers, e.g. `hidden = 32,16`.
    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.parse_with(key, "comma-separated unsigned integers", |v| {
            v.split(',').map(|p| p.trim().parse().ok()).collect()
        })
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        Ok(self.usize_list(key)?.unwrap_or_else(|| default.to_vec()))
    }

    pub fn u64_list_or(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        Ok(self
            .parse_with(key, "comma-separated unsigned integers", |v| {
                v.split(',').map(|p| p.trim().parse().ok()).collect()
            })?
            .unwrap_or_else(|| default.to_vec()))
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .parse_with(key, "comma-separated numbers", |v| {
                v.split(',').map(|p| p.trim().parse().ok()).collect()
            })?
            .unwrap_or_else(|| default.to_vec()))
    }

    /// An optional count where the literal `none` (or absence) means "off":
    /// used for early-stopping patience.
    pub fn usize_or_none(&self, key: &str) -> Result<Option<usize>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Usage(format!("config key '{key}': expected an integer or 'none', got '{v}'"))
            }),
        }
    }
}
