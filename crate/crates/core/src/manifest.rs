//! Run manifests: what a command read, what it wrote, and digests of both.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where manifest timestamps come from. A fixed clock makes manifests of
/// repeated runs byte-identical.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(i64),
}

impl Clock {
    /// `SOURCE_DATE_EPOCH` when set to an integer, the system clock otherwise.
    pub fn from_env() -> Clock {
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .map_or(Clock::System, Clock::Fixed)
    }

    pub fn now(self) -> i64 {
        match self {
            Clock::Fixed(t) => t,
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Inputs by file name (directories vary between runs, contents do not).
    pub inputs: Vec<FileDigest>,
    /// Artifacts by path relative to the output directory.
    pub artifacts: Vec<FileDigest>,
    pub created_unix: i64,
    /// SHA-256 over the sorted `path:digest` lines of all artifacts.
    pub outputs_digest: String,
}

/// Collects the files a command writes under its output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<FileDigest>,
    inputs: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `relative` under the root and records its digest.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.retain(|a| a.path != relative);
        self.artifacts.push(FileDigest {
            path: relative.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    /// One compact JSON document per line.
    pub fn write_json_lines<T: Serialize>(
        &mut self,
        relative: &str,
        rows: impl IntoIterator<Item = T>,
    ) -> Result<PathBuf> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(&row)?);
            text.push('\n');
        }
        self.write(relative, text.as_bytes())
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.push(FileDigest {
            path: name,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes `manifest.json` (not listed among its own artifacts).
    pub fn finish(mut self, command: &str, seed: u64, config: serde_json::Value, clock: Clock) -> Result<RunManifest> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            outputs_digest: outputs_digest(&self.artifacts),
            inputs: self.inputs,
            artifacts: self.artifacts,
            created_unix: clock.now(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn outputs_digest(artifacts: &[FileDigest]) -> String {
    let mut lines: Vec<String> = artifacts.iter().map(|a| format!("{}:{}\n", a.path, a.sha256)).collect();
    lines.sort();
    sha256_hex(lines.concat().as_bytes())
}

/// Re-hashes every artifact listed in the manifest under `root` and returns
/// the paths whose contents no longer match.
pub fn verify(root: &Path) -> Result<Vec<String>> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let mut bad = Vec::new();
    for a in &manifest.artifacts {
        let file = root.join(&a.path);
        match fs::read(&file) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
            _ => bad.push(a.path.clone()),
        }
    }
    Ok(bad)
}
