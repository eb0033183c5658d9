//! Run manifest: resolved config, seed and the files read and written.

use std::path::Path;

use hfactor::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let digest = Sha256::digest(std::fs::read(path)?);
        Ok(FileRecord {
            path: path.display().to_string(),
            sha256: format!("{digest:x}"),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl Manifest {
    pub fn new(command: &'static str, config: Value, seed: Option<u64>) -> Self {
        Manifest {
            tool: "hfactor",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Sidecar path for an output file: `<out>.manifest.json`.
    pub fn sidecar(out: &Path) -> std::path::PathBuf {
        let mut name = out
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
