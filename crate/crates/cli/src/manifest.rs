//! Run manifests: what was run, when, and a checksum for every output file.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::hex_digest;
use crate::{write_file, CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub version: String,
    /// Relative path (with `/` separators) to hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    /// Checksums the listed files (paths relative to `dir`).
    pub fn from_files(dir: &Path, files: &[String], config_hash: &str, started: u64) -> Result<Self> {
        let mut checksums = BTreeMap::new();
        for name in files {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            checksums.insert(name.replace('\\', "/"), hex_digest(&bytes));
        }
        Ok(RunManifest {
            config_hash: config_hash.to_string(),
            started,
            finished: now(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            checksums,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_file(&dir.join(MANIFEST_FILE), s.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Files whose checksums differ, or that only one manifest lists.
    pub fn differences(&self, other: &RunManifest) -> Vec<String> {
        let mut out: Vec<String> = self
            .checksums
            .iter()
            .filter(|(k, v)| other.checksums.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        out.extend(other.checksums.keys().filter(|k| !self.checksums.contains_key(*k)).cloned());
        out.sort();
        out
    }
}
