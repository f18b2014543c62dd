//! Minimal `key = value` config files with `#` comments.

use crate::errors::CliError;
use std::collections::HashMap;
use std::path::Path;

pub struct KvConfig {
    entries: HashMap<String, String>,
}

impl KvConfig {
    pub fn empty() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("config {}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::domain(format!(
                    "config {}: line {}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::domain(format!("config field {key}: cannot parse {raw:?}"))),
        }
    }
}
