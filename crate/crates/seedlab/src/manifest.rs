//! Run manifests and atomic file output.
//!
//! Every command writes its artifacts through `OutputWriter` so the manifest
//! always carries a complete inventory with content hashes; re-running a
//! command with the same config and seed must reproduce every listed hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::numerics::RNG_ALGO_TAG;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub rng_algorithm: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<FileRecord>,
    /// Free-form run constants (rescale coefficients, optimizer constants...).
    pub notes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            artifact_version: ARTIFACT_VERSION.to_string(),
            rng_algorithm: RNG_ALGO_TAG.to_string(),
            config_hash: config_hash.to_string(),
            master_seed,
            started_unix: unix_now(),
            finished_unix: None,
            outputs: Vec::new(),
            notes: BTreeMap::new(),
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    crate::denoiser::network::hex_string(&hasher.finalize())
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp-{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Collects output files and finalizes the manifest in one place.
pub struct OutputWriter {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutputWriter {
    pub fn new(root: &Path, command: &str, config_hash: &str, master_seed: u64) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let manifest = RunManifest::new(command, config_hash, master_seed);
        let writer = Self { root: root.to_path_buf(), manifest };
        // Emit the open manifest up front; finalize() overwrites it.
        writer.write_manifest()?;
        Ok(writer)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn note(&mut self, key: &str, value: String) {
        self.manifest.notes.insert(key.to_string(), value);
    }

    /// Writes one artifact atomically and records it in the inventory.
    pub fn emit(&mut self, rel_path: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel_path);
        write_atomic(&path, bytes)?;
        self.manifest.outputs.push(FileRecord {
            path: rel_path.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    fn manifest_name(&self) -> String {
        format!("manifest_{}.json", self.manifest.command)
    }

    fn write_manifest(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&self.root.join(self.manifest_name()), &json)
    }

    pub fn finalize(mut self) -> Result<RunManifest> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest.finished_unix = Some(unix_now());
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_records_hashes() {
        let dir = std::env::temp_dir().join(format!("seedlab-manifest-{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        let mut w = OutputWriter::new(&dir, "test", "cfg", 1).unwrap();
        w.emit("a.txt", b"hello").unwrap();
        let manifest = w.finalize().unwrap();
        assert_eq!(manifest.outputs.len(), 1);
        assert_eq!(
            manifest.outputs[0].sha256,
            sha256_hex(b"hello")
        );
        assert!(dir.join("manifest_test.json").exists());
        assert_eq!(std::fs::read(dir.join("a.txt")).unwrap(), b"hello");
        std::fs::remove_dir_all(&dir).ok();
    }
}
