//! `manifest.json`: what a command read, what it wrote, and with which settings.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u128,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<InputHash>,
    outputs: Vec<PathBuf>,
    started_at: String,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        let path = path.display().to_string();
        if !self.inputs.iter().any(|i| i.path == path) {
            self.inputs.push(InputHash { path, sha256 });
        }
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    /// Writes the manifest into `out_dir` and returns it.
    pub fn finish(self, out_dir: &Path) -> Result<RunManifest> {
        let mut outputs: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(out_dir).unwrap_or(p).display().to_string())
            .collect();
        outputs.sort();
        outputs.dedup();
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            finished_at: now(),
            elapsed_ms: self.clock.elapsed().as_millis(),
        };
        let path = out_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
