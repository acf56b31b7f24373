use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    /// Non-empty lines.
    pub records: u64,
    pub sha256: String,
}

impl FileEntry {
    pub fn of(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut hasher = Sha256::new();
        let mut records = 0;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            hasher.update(&buf);
            if buf.iter().any(|b| !b.is_ascii_whitespace()) {
                records += 1;
            }
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { name, records, sha256: hex(&hasher.finalize()) })
    }
}

/// Reproducibility record written next to every stage's outputs. Contains
/// no timestamps or absolute paths, so reruns produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub stage: String,
    pub tool_version: String,
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<FileEntry>,
    pub files: Vec<FileEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the compact JSON form; object keys are sorted, so equal
/// configs hash equally.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex(&Sha256::digest(config.to_string().as_bytes()))
}

impl CorpusManifest {
    pub fn new(stage: &str, config: serde_json::Value, inputs: Vec<FileEntry>, files: Vec<FileEntry>) -> Self {
        Self {
            stage: stage.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            schema_version: super::SCHEMA_VERSION,
            config_hash: config_hash(&config),
            config,
            inputs,
            files,
        }
    }

    pub fn file_name(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(Self::file_name(&self.stage))
    }

    pub fn hash_matches(&self) -> bool {
        config_hash(&self.config) == self.config_hash
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = self.path_in(dir);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::MalformedRecord { line: 0, reason: e.to_string() })?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::MalformedRecord { line: e.line(), reason: e.to_string() })?;
        if m.schema_version != super::SCHEMA_VERSION {
            return Err(Error::SchemaVersionMismatch {
                expected: super::SCHEMA_VERSION,
                found: u64::from(m.schema_version),
            });
        }
        Ok(m)
    }
}
