//! Run manifests and atomic report output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility envelope written ahead of every report payload.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub engine_version: String,
    /// Digest of the resolved configuration, after flag overrides.
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub payload_digest: String,
    pub started_ms: u128,
    pub finished_ms: u128,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    payload: &'a T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let fail =
        |e: std::io::Error| CliError::runtime(format!("cannot write {}: {e}", path.display()));
    fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

/// One command invocation: collects input digests and writes its outputs.
pub struct Run {
    command: String,
    out: PathBuf,
    config_digest: String,
    seed: u64,
    inputs: Vec<InputDigest>,
    started_ms: u128,
}

impl Run {
    pub fn new(command: &str, out: &Path) -> Self {
        Self {
            command: command.to_string(),
            out: out.to_path_buf(),
            config_digest: String::new(),
            seed: 0,
            inputs: Vec::new(),
            started_ms: now_ms(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn set_config<T: Serialize>(&mut self, resolved: &T, seed: u64) {
        let bytes = serde_json::to_vec(resolved).expect("config serializes");
        self.config_digest = sha256_hex(&bytes);
        self.seed = seed;
    }

    pub fn manifest(&self, payload_digest: String) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            engine_version: mmlab::VERSION.to_string(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            inputs: self.inputs.clone(),
            payload_digest,
            started_ms: self.started_ms,
            finished_ms: now_ms(),
        }
    }

    /// Writes `{"manifest": .., "payload": ..}` as pretty JSON. The manifest
    /// comes first so the payload text is a suffix of the file.
    pub fn write_report<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf, CliError> {
        let digest = sha256_hex(&serde_json::to_vec(payload).expect("payload serializes"));
        let manifest = self.manifest(digest);
        let mut text = serde_json::to_string_pretty(&Envelope {
            manifest: &manifest,
            payload,
        })
        .expect("report serializes");
        text.push('\n');
        let path = self.out.join(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
