//! Artifact writing. Every file is written to a hidden temporary sibling
//! and renamed into place, so readers never see a half-written file.

use std::path::{Path, PathBuf};

use nucleo::image::ImageError;

use crate::CliError;

/// Name of the marker left in the output directory when a command fails.
pub const FAILED_MARKER: &str = ".failed";

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

/// Temporary sibling of `path` that keeps its extension, so image encoders
/// still pick the right format.
fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".tmp-{}-{name}", std::process::id()))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io(path, e))
}

/// Runs `write` against a temporary path, then renames it onto `path`.
pub fn atomic<F>(path: &Path, write: F) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> Result<(), CliError>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let tmp = temp_path(path);
    let result = write(&tmp).and_then(|()| std::fs::rename(&tmp, path).map_err(|e| io(path, e)));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    atomic(path, |tmp| std::fs::write(tmp, text).map_err(|e| io(path, e)))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic(path, |tmp| std::fs::write(tmp, bytes).map_err(|e| io(path, e)))
}

pub fn write_image<F>(path: &Path, save: F) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> Result<(), ImageError>,
{
    atomic(path, |tmp| save(tmp).map_err(|e| io(path, e)))
}

pub fn mark_failed(output_dir: &Path, message: &str) {
    if std::fs::create_dir_all(output_dir).is_ok() {
        let _ = std::fs::write(output_dir.join(FAILED_MARKER), format!("{message}\n"));
    }
}

pub fn clear_failed(output_dir: &Path) {
    let _ = std::fs::remove_file(output_dir.join(FAILED_MARKER));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.csv");
        write_text(&p, "x\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x\n");
        let failed = atomic(&dir.path().join("b.csv"), |tmp| {
            std::fs::write(tmp, "partial").unwrap();
            Err(CliError::Data("boom".into()))
        });
        assert!(failed.is_err());
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("sub")]);
    }
}
