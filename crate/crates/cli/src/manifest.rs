//! `manifest.json`: provenance sidecar for every file a command writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Keyed by path relative to the output directory.
    pub files: BTreeMap<String, FileEntry>,
}

impl Manifest {
    fn empty() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            files: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Ok(Self::empty());
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Records `files` (inside `dir`) under `command` and rewrites the manifest.
    pub fn record(dir: &Path, command: &str, seed: u64, config_hash: &str, files: &[PathBuf]) -> Result<()> {
        let mut m = Self::load(dir)?;
        m.version = env!("CARGO_PKG_VERSION").into();
        for f in files {
            let bytes = fs::read(f).with_context(|| format!("hashing {}", f.display()))?;
            let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().replace('\\', "/");
            m.files.insert(
                rel,
                FileEntry {
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    command: command.into(),
                    seed,
                    config_hash: config_hash.into(),
                },
            );
        }
        let text = serde_json::to_string_pretty(&m)? + "\n";
        fs::write(dir.join(FILE_NAME), text)?;
        Ok(())
    }
}
