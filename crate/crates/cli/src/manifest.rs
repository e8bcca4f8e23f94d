//! Run provenance: every run directory gets a `manifest.json` recording the
//! invoked command, config hash, input file hashes, seed, and per-step
//! timings and outputs.
//!
//! The manifest is the one artifact allowed to differ between otherwise
//! identical runs (it carries wall-clock data), so determinism comparisons
//! must exclude it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot hash '{}': {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    /// Artifact paths relative to the run directory.
    pub outputs: Vec<String>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    /// The subcommand and its arguments as invoked.
    pub command: Vec<String>,
    /// Hash of the effective (fully resolved) config bytes.
    pub config_hash: String,
    /// Hashes of external inputs, keyed by the path as given.
    pub input_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub created_utc: String,
}

/// Accumulates step records while the run executes inside its staging
/// directory, then writes the manifest atomically.
pub struct ManifestBuilder {
    manifest: RunManifest,
    staging: PathBuf,
}

impl ManifestBuilder {
    pub fn new(command: Vec<String>, config_hash: String, seed: u64, staging: &Path) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                version: 1,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command,
                config_hash,
                input_hashes: BTreeMap::new(),
                seed,
                steps: Vec::new(),
                created_utc: chrono::Utc::now().to_rfc3339(),
            },
            staging: staging.to_path_buf(),
        }
    }

    pub fn record_input(&mut self, label: &str, path: &Path) -> Result<(), CliError> {
        let hash = sha256_file(path)?;
        self.manifest.input_hashes.insert(label.to_string(), hash);
        Ok(())
    }

    /// Runs one pipeline step, timing it and recording the artifacts the
    /// step pushes into the output list.
    pub fn step<R>(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut Vec<PathBuf>) -> Result<R, CliError>,
    ) -> Result<R, CliError> {
        let start = Instant::now();
        let mut outputs = Vec::new();
        let result = body(&mut outputs)?;
        let rel: Vec<String> = outputs
            .iter()
            .map(|p| {
                p.strip_prefix(&self.staging)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        self.manifest.steps.push(StepRecord {
            name: name.to_string(),
            outputs: rel,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        Ok(result)
    }

    /// Serializes the manifest into the staging directory via a temp file
    /// and rename, so a crash never leaves a half-written manifest.
    pub fn write(self) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Data(format!("manifest serialization: {e}")))?;
        let tmp = self.staging.join("manifest.json.tmp");
        let target = self.staging.join("manifest.json");
        std::fs::write(&tmp, body.as_bytes())
            .map_err(|e| CliError::Data(format!("cannot write '{}': {e}", tmp.display())))?;
        std::fs::rename(&tmp, &target)
            .map_err(|e| CliError::Data(format!("cannot finalize '{}': {e}", target.display())))?;
        Ok(())
    }
}
