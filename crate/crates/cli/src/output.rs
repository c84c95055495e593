//! Artifact directory: CSV writers, snapshots and the hashed manifest.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use ymlab_core::lattice::{snapshot, GaugePotential};

use crate::CliError;

pub const MANIFEST: &str = "manifest.toml";

/// Shortest round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn coord_header(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("z{i}")).collect()
}

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    files: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::usage(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        self.record(name);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::usage(format!("cannot encode {name}: {e}"));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::usage(format!("cannot encode {name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_snapshot(&mut self, name: &str, a: &GaugePotential, tau: f64) -> Result<(), CliError> {
        let mut buf = Vec::new();
        snapshot::write_snapshot(&mut buf, a, tau).map_err(CliError::from)?;
        self.write_bytes(name, &buf)
    }

    /// Hash every recorded file as it is on disk and write the manifest.
    pub fn finish(self, command: &str) -> Result<PathBuf, CliError> {
        let mut files = Vec::with_capacity(self.written.len());
        for name in &self.written {
            let path = self.root.join(name);
            let bytes =
                std::fs::read(&path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            files.push(ManifestEntry {
                path: name.clone(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let text = toml::to_string(&Manifest { command, files }).expect("manifest serializes");
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
