//! Run manifest: everything needed to reproduce a run's outputs.

use std::path::{Path, PathBuf};

use arbdetect_core::dataio::FORMAT_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub artifact_format_version: u32,
    pub command: String,
    pub seed: u64,
    pub train_seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest(path: &Path) -> Result<FileDigest, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[PathBuf]) -> Result<Self, Failure> {
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            artifact_format_version: FORMAT_VERSION,
            command: command.to_string(),
            seed: cfg.seed,
            train_seed: cfg.train.seed,
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
            inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
            outputs: outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
