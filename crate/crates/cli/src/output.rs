use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: &'a [FileEntry],
    outputs: &'a [FileEntry],
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files of one run and writes a manifest listing their hashes.
/// Entries keep insertion order, which every command fixes.
pub struct Output {
    dir: PathBuf,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        std::fs::write(self.path(name), bytes).map_err(quench_core::Error::from)?;
        self.outputs.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len(),
            sha256: digest(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(quench_core::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Records an input by file name and content hash.
    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let bytes = std::fs::read(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.push(FileEntry {
            name,
            bytes: bytes.len(),
            sha256: digest(&bytes),
        });
        Ok(())
    }

    pub fn finish(self, command: &str, config: &RunConfig) -> Result<usize, Failure> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(quench_core::Error::from)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text).map_err(quench_core::Error::from)?;
        Ok(self.outputs.len())
    }
}

/// Builds a CSV in memory. Floats use the shortest round-trip form.
pub fn csv_bytes<I, R>(header: &[String], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Compact tag for file names, e.g. `1.95` for 1.95 µs.
pub fn tag(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}
