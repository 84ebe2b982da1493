use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
}

/// SHA-256 of the compact JSON encoding; object keys serialize sorted, so equal
/// configs hash equally regardless of the key order in the source file.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String, CliError> {
    let value = serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = serde_json::to_string(&value).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            outputs: Vec::new(),
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<(), CliError> {
        self.finished_unix_ms = now_ms();
        self.outputs.sort();
        let text =
            serde_json::to_string_pretty(&self).map_err(|e| CliError::Usage(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Option<Self> {
        serde_json::from_slice(&std::fs::read(path).ok()?).ok()
    }
}

/// Refuses to clobber the results of an earlier run unless forced.
pub fn guard_overwrite(manifest_path: &Path, hash: &str, force: bool) -> Result<(), CliError> {
    if force || !manifest_path.exists() {
        return Ok(());
    }
    let detail = match RunManifest::read(manifest_path) {
        Some(m) if m.config_hash == hash => "a run with the same configuration",
        _ => "an earlier run",
    };
    Err(CliError::Usage(format!(
        "{} already holds {detail}; pass --force to overwrite",
        manifest_path.display()
    )))
}
