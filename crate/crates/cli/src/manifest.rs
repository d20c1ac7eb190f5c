//! Run manifests: enough to re-run a command exactly. No timestamps or absolute
//! paths, so repeated runs produce identical bytes.

use std::path::Path;

use regimerl::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub file_name: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn input_record(role: &str, path: &Path) -> Result<InputRecord> {
    let bytes = std::fs::read(path)?;
    Ok(InputRecord {
        role: role.into(),
        file_name: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: Vec<InputRecord>,
    mut outputs: Vec<String>,
) -> Result<()> {
    let config = serde_json::to_value(cfg)?;
    let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    outputs.sort();
    let m = Manifest {
        schema_version: regimerl::SCHEMA_VERSION,
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        inputs,
        config,
        config_sha256,
        outputs,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}
