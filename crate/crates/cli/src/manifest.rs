//! Run manifests written next to every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    /// Input path to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn start(config: Option<&Path>, seed: Option<u64>) -> io::Result<Self> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            config_sha256: config.map(sha256_file).transpose()?,
            seed,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            started_at: unix_now(),
            finished_at: 0,
        })
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    /// Writes `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> io::Result<PathBuf> {
        self.finished_at = unix_now();
        let path = manifest_path(primary);
        let mut json = serde_json::to_string_pretty(&self).map_err(io::Error::other)?;
        json.push('\n');
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
