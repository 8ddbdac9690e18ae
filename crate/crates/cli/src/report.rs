//! Output files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub checkpoints: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    /// Command-specific values worth keeping next to the results.
    pub notes: BTreeMap<String, serde_json::Value>,
    pub wall_clock_secs: f64,
}

/// Collects the files a command writes under one output directory.
pub struct OutputDir {
    root: PathBuf,
    pub checkpoints: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            checkpoints: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.outputs.push(FileEntry {
            path: name.to_string(),
            crc32: crc32fast::hash(bytes),
        });
        Ok(())
    }

    pub fn record_checkpoint(&mut self, name: &str, crc32: u32) {
        self.checkpoints.push(FileEntry {
            path: name.to_string(),
            crc32,
        });
    }

    pub fn finish(
        self,
        command: &str,
        config: &ExperimentConfig,
        notes: BTreeMap<String, serde_json::Value>,
        wall_clock_secs: f64,
    ) -> std::io::Result<RunManifest> {
        let manifest = RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            checkpoints: self.checkpoints,
            outputs: self.outputs,
            notes,
            wall_clock_secs,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        write_atomic(&self.root.join("manifest.json"), &json)?;
        Ok(manifest)
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::other(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
