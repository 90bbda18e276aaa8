//! Output directory bookkeeping and run manifests.

use crate::config::{hex_digest, ExperimentConfig};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub graph_schema_version: u32,
    pub path_schema_version: u32,
    pub outputs: Vec<OutputEntry>,
    pub passed: Option<bool>,
    pub error: Option<String>,
    pub elapsed_seconds: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).context("parsing manifest")?;
        anyhow::ensure!(m.schema_version == MANIFEST_SCHEMA_VERSION, "manifest schema {} is not supported", m.schema_version);
        anyhow::ensure!(m.config.hash() == m.config_hash, "manifest config hash does not match its config");
        Ok(m)
    }

    /// Outputs whose hashes differ from `other`, ignoring the manifest itself.
    pub fn differences(&self, other: &Manifest) -> Vec<String> {
        let mut diff = Vec::new();
        for a in &self.outputs {
            match other.outputs.iter().find(|b| b.path == a.path) {
                Some(b) if b.sha256 == a.sha256 => {}
                Some(_) => diff.push(format!("{} differs", a.path)),
                None => diff.push(format!("{} missing", a.path)),
            }
        }
        for b in &other.outputs {
            if !self.outputs.iter().any(|a| a.path == b.path) {
                diff.push(format!("{} unexpected", b.path));
            }
        }
        diff
    }
}

/// Directory receiving a run's files. Files are written immediately and hashed as they go.
pub struct OutDir {
    root: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        let e = OutputEntry { path: name.to_string(), sha256: hex_digest(bytes), bytes: bytes.len() as u64 };
        match self.entries.iter_mut().find(|x| x.path == name) {
            Some(old) => *old = e,
            None => self.entries.push(e),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn read_to_string(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<OutputEntry> {
        self.entries
    }
}
