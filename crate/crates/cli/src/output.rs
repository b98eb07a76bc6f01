use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Collects the files written by a run.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    /// Writes a CSV table; header cells carry their units in brackets.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut s = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `(name, sha256)` of every file written so far.
    pub fn digests(&self) -> Result<Vec<(String, String)>, CliError> {
        self.files
            .iter()
            .map(|f| {
                let p = self.dir.join(f);
                let b = fs::read(&p).map_err(|e| io_err(&p, e))?;
                Ok((f.clone(), sha256_hex(&b)))
            })
            .collect()
    }
}

/// Shortest round-trip representation, scientific outside `[1e-4, 1e6)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub bit_stable: bool,
    pub versions: Versions,
    /// Wall time [s]; null in bit-stable runs.
    pub wall_time_s: Option<f64>,
    pub status: String,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputFile>,
}

#[derive(Serialize)]
pub struct Versions {
    pub coopoptics: &'static str,
    pub cli: &'static str,
}
