use std::fs;
use std::path::{Path, PathBuf};

use hetero_rlhf::data::{header_path, write_corpus, Corpus};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

/// Writes files under one output directory and remembers their hashes.
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        eprintln!("  wrote {}", path.display());
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Corpus JSONL plus its header sidecar.
    pub fn write_corpus(&mut self, name: &str, corpus: &Corpus) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        write_corpus(corpus, &path).map_err(|e| CliError::stage("write corpus", e))?;
        self.record(name)?;
        let header = header_path(&path);
        let header_name = header
            .file_name()
            .and_then(|n| n.to_str())
            .expect("header path has a file name")
            .to_string();
        self.record(&header_name)?;
        Ok(path)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            artifacts: self.entries.clone(),
        }
    }

    pub fn write_manifest(&mut self) -> Result<PathBuf, CliError> {
        let manifest = self.manifest();
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        eprintln!("  wrote {}", path.display());
        Ok(path)
    }
}
