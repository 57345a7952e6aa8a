//! Atomic file and directory writes: everything lands under a temporary
//! name in the destination's directory and is renamed into place, so no
//! command ever leaves a partial output file.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Builds a directory's full contents via `fill` in a temporary sibling,
/// then renames it to `path`. Fails if `path` already exists.
pub fn write_dir_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if path.exists() {
        return Err(Error::Usage(format!(
            "output directory {} already exists; refusing to overwrite",
            path.display()
        )));
    }
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let staging = tempfile::tempdir_in(parent).map_err(|e| Error::io(parent, e))?;
    fill(staging.path())?;
    // Keep the staged tree and move it into place.
    let staged = staging.keep();
    fs::rename(&staged, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}
