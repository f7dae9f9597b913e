//! Run manifest: config hash, tool version, stage wall-times and every emitted file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// SHA-256 of the config file bytes, or of the suite settings.
    pub config_hash: String,
    /// Wall-clock seconds per stage, keyed by subcommand.
    pub wall_seconds: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            wall_seconds: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    /// Reads the manifest in `dir` if it belongs to the same config; stages of one config
    /// share a manifest.
    pub fn load_or_new(dir: &Path, config_hash: &str) -> Self {
        fs::read(dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
            .filter(|m| m.config_hash == config_hash)
            .unwrap_or_else(|| Self::new(config_hash))
    }
}

/// Files of one stage, held in memory until the stage has succeeded.
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs { files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Writes every file and records it, with the stage time, in the manifest.
    pub fn commit(self, dir: &Path, config_hash: &str, stage: &str, seconds: f64) -> Result<Vec<PathBuf>, CliError> {
        ensure_dir(dir)?;
        let mut manifest = RunManifest::load_or_new(dir, config_hash);
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = dir.join(&name);
            fs::write(&path, &bytes).map_err(|e| CliError::output(format!("cannot write {}: {e}", path.display())))?;
            manifest.files.retain(|f| f.path != name);
            manifest.files.push(FileEntry { path: name, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
            written.push(path);
        }
        manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.wall_seconds.insert(stage.into(), seconds);
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(|e| CliError::output(format!("cannot write {}: {e}", path.display())))?;
        Ok(written)
    }
}

impl Default for Outputs {
    fn default() -> Self {
        Self::new()
    }
}

/// Creates `dir` and checks that a file can be created in it.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".hjbopt-write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::output(format!("cannot write in {}: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
