//! Atomic artifact writes and the run manifest that records them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a command: its resolved configuration, the
/// digests of its inputs and the artifacts it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Reads a JSON config file; any failure is a configuration error.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Output directory of one command plus the digests of what it has written.
pub struct Outputs {
    dir: PathBuf,
    command: &'static str,
    started_at: String,
    inputs: Vec<FileDigest>,
    written: Vec<FileDigest>,
}

impl Outputs {
    pub fn new(dir: &Path, command: &'static str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command,
            started_at: now(),
            inputs: Vec::new(),
            written: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        let digest = FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        };
        // A rewritten artifact keeps one entry with its latest digest.
        self.written.retain(|d| d.path != digest.path);
        self.written.push(digest);
        Ok(path)
    }

    /// Writes `<command>_manifest.json` last so it lists every artifact.
    pub fn finish(
        mut self,
        seed: Option<u64>,
        config: serde_json::Value,
    ) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            tool: "fingan".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            started_at: self.started_at.clone(),
            finished_at: now(),
            seed,
            config,
            inputs: std::mem::take(&mut self.inputs),
            artifacts: std::mem::take(&mut self.written),
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        let name = format!("{}_manifest.json", self.command);
        let path = self.path(&name);
        write_atomic(&path, &json)?;
        Ok(path)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
