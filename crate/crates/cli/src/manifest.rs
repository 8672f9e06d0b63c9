//! Run manifests: what went in, what came out, and their digests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    /// Data rows, excluding the header.
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub simulated_duration_s: Option<f64>,
    pub wall_clock_s: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<OutputRecord>,
    pub row_counts: BTreeMap<String, usize>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects output files written into one run directory.
pub struct OutputDir {
    pub dir: PathBuf,
    written: Vec<(String, usize)>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` through `body` and records its row count.
    pub fn write<F>(&mut self, name: &str, rows: usize, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|()| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.written.push((name.to_string(), rows));
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<OutputRecord>, CliError> {
        self.written
            .iter()
            .map(|(name, rows)| {
                Ok(OutputRecord {
                    file: name.clone(),
                    sha256: sha256_file(&self.path(name))?,
                    rows: *rows,
                })
            })
            .collect()
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), CliError> {
        let path = self.path(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input {
        path,
        message: e.to_string(),
    })
}
