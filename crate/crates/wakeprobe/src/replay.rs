//! `FLOWSNP1` files on disk.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use wakeprobe_core::surrogate::{ArchiveError, SnapshotArchive};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: ArchiveError },
    #[error("no archive for spacing {spacing} under {dir}")]
    NoArchive { spacing: f64, dir: PathBuf },
}

pub fn save_replay(archive: &SnapshotArchive, path: &Path) -> Result<(), ReplayError> {
    let bytes = archive.encode().map_err(|source| ReplayError::Format { path: path.into(), source })?;
    fs::write(path, bytes).map_err(|source| ReplayError::Io { path: path.into(), source })
}

pub fn load_replay(path: &Path) -> Result<SnapshotArchive, ReplayError> {
    let bytes = fs::read(path).map_err(|source| ReplayError::Io { path: path.into(), source })?;
    SnapshotArchive::decode(&bytes).map_err(|source| ReplayError::Format { path: path.into(), source })
}

/// Either one archive file or a directory of them, looked up by spacing.
#[derive(Debug, Clone)]
pub struct ReplayLibrary {
    root: PathBuf,
}

impl ReplayLibrary {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// The archive whose header spacing equals `spacing` (within 1e−9).
    pub fn find(&self, spacing: f64) -> Result<SnapshotArchive, ReplayError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReplayError::Io { path, source }
        };
        let candidates: Vec<PathBuf> = if self.root.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(&self.root)
                .map_err(io_err(&self.root))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            v.sort();
            v
        } else {
            vec![self.root.clone()]
        };
        for path in candidates {
            let archive = match load_replay(&path) {
                Ok(a) => a,
                // other files in the directory are not archives
                Err(ReplayError::Format { .. }) if self.root.is_dir() => continue,
                Err(e) => return Err(e),
            };
            if (archive.spacing - spacing).abs() <= 1e-9 {
                return Ok(archive);
            }
        }
        Err(ReplayError::NoArchive { spacing, dir: self.root.clone() })
    }
}
