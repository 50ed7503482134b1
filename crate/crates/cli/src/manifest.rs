//! Run manifests: every command records what it read (with content
//! digests), the configuration it ran under, and what it wrote.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path -> sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    started_at: chrono::DateTime<chrono::Utc>,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            seed: None,
            started_at: chrono::Utc::now(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Digest and record an input file.
    pub fn input(mut self, path: &Path) -> anyhow::Result<Self> {
        let digest = sha256_file(path)
            .with_context(|| format!("digesting input {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(self)
    }

    pub fn input_optional(self, path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => self.input(p),
            None => Ok(self),
        }
    }

    /// Finish the run and write `manifest.json` under `dir`.
    pub fn write(self, dir: &Path, outputs: Vec<PathBuf>) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        self.write_file(&dir.join("manifest.json"), outputs)
    }

    /// Finish the run and write the manifest to an explicit file path; used
    /// by commands whose primary output is a single file.
    pub fn write_file(self, path: &Path, outputs: Vec<PathBuf>) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            seed: self.seed,
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
