//! Run manifest: what was run, with which config and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scmcts_core::pipeline::RunConfig;

use crate::checkpoint;
use crate::config::dump_config;
use crate::error::{io_error, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub package_version: String,
    pub checkpoint_format: u16,
    pub command: String,
    pub seed: u64,
    pub variant: Option<String>,
    pub seeds: Vec<u64>,
    /// SHA-256 of the effective-config dump.
    pub config_hash: String,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, variant: Option<&str>, config: &RunConfig) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: checkpoint::FORMAT_VERSION,
            command: command.to_string(),
            seed,
            variant: variant.map(str::to_string),
            seeds: config.pipeline.seeds.clone(),
            config_hash: config_hash(config),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest always serializes");
        std::fs::write(path, text + "\n").map_err(io_error(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    Sha256::digest(dump_config(config).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
