//! Run manifests: every subcommand writes one next to its outputs with the
//! fully resolved arguments, enough to replay the run bit-for-bit.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub subcommand: String,
    /// Resolved arguments after config-file and flag merging; replay feeds
    /// these back into the same code path.
    pub args: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
}

pub struct ManifestBuilder {
    subcommand: String,
    args: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    started_at: chrono::DateTime<chrono::Utc>,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, args: serde_json::Value) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            args,
            seeds: Vec::new(),
            inputs: Vec::new(),
            started_at: chrono::Utc::now(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Write atomically next to the outputs: temp file in the same
    /// directory, then rename.
    pub fn write(self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: self.subcommand,
            args: self.args,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: vec![out_dir.to_path_buf()],
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
        };
        let path = out_dir.join(MANIFEST_FILE);
        let tmp = out_dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&tmp, body)
            .with_context(|| format!("writing manifest temp file {}", tmp.display()))?;
        std::fs::rename(&tmp, &path)
            .with_context(|| format!("renaming manifest into place at {}", path.display()))?;
        Ok(path)
    }
}

pub fn read(path: &Path) -> anyhow::Result<RunManifest> {
    let data = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: RunManifest =
        serde_json::from_str(&data).with_context(|| format!("parsing manifest {}", path.display()))?;
    anyhow::ensure!(
        manifest.version == MANIFEST_VERSION,
        "unsupported manifest version {}",
        manifest.version
    );
    Ok(manifest)
}
