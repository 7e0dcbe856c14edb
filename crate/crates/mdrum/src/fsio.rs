//! Whole-file atomic writes and run directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{AppError, AppResult};

/// Write `bytes` to a temporary file next to `path`, then rename it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| AppError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

pub fn read(path: &Path) -> AppResult<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

pub fn read_to_string(path: &Path) -> AppResult<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

/// Marker written into every completed run directory.
pub const MANIFEST: &str = "manifest.txt";

/// Staging directory for a run whose final location is `out`. Files go into
/// the staging area and [`RunDir::commit`] renames it into place, so a
/// crashed run never leaves a half-written output directory behind.
pub struct RunDir {
    out: PathBuf,
    staging: tempfile::TempDir,
}

impl RunDir {
    pub fn create(out: &Path) -> AppResult<Self> {
        if out.exists() {
            let is_run = out.join(MANIFEST).is_file();
            let is_empty = fs::read_dir(out)
                .map_err(|e| AppError::io(out, e))?
                .next()
                .is_none();
            if !is_run && !is_empty {
                return Err(AppError::Usage(format!(
                    "{} exists and is not a previous run directory",
                    out.display()
                )));
            }
        }
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| AppError::io(&parent, e))?;
        let staging = tempfile::Builder::new()
            .prefix(".mdrum-run-")
            .tempdir_in(&parent)
            .map_err(|e| AppError::io(&parent, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            staging,
        })
    }

    /// Where files should be written before the commit.
    pub fn path(&self) -> &Path {
        self.staging.path()
    }

    pub fn final_path(&self) -> &Path {
        &self.out
    }

    pub fn commit(self) -> AppResult<PathBuf> {
        if self.out.exists() {
            fs::remove_dir_all(&self.out).map_err(|e| AppError::io(&self.out, e))?;
        }
        let staged = self.staging.keep();
        fs::rename(&staged, &self.out).map_err(|e| AppError::io(&self.out, e))?;
        Ok(self.out)
    }
}
