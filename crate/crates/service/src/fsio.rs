//! Atomic file replacement: write a sibling temp file, fsync, rename.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Where an injected write failure strikes. Used to simulate a crash in
/// the middle of persisting a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// Half of the bytes reach the temp file, then the write fails.
    TornTempWrite,
    /// The temp file is complete but the rename never happens.
    BeforeRename,
}

pub(crate) const TEMP_SUFFIX: &str = ".tmp";

pub(crate) fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(TEMP_SUFFIX);
    path.with_file_name(name)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8], fail: Option<FailPoint>) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    let mut file = File::create(&tmp)?;
    if fail == Some(FailPoint::TornTempWrite) {
        file.write_all(&bytes[..bytes.len() / 2])?;
        return Err(io::Error::other("injected failure: torn temp write"));
    }
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    if fail == Some(FailPoint::BeforeRename) {
        return Err(io::Error::other("injected failure before rename"));
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // Persist the rename itself; not every platform lets us open a
        // directory, so failures here are ignored.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub(crate) fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T, fail: Option<FailPoint>) -> io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes, fail)
}

/// Removes leftover temp files below `dir`.
pub(crate) fn sweep_temp_files(dir: &Path) -> io::Result<usize> {
    let mut removed = 0;
    if !dir.exists() {
        return Ok(0);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            removed += sweep_temp_files(&path)?;
        } else if path.to_string_lossy().ends_with(TEMP_SUFFIX) {
            fs::remove_file(&path)?;
            removed += 1;
        }
    }
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_writes_leave_the_old_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a").join("rec.json");
        write_atomic(&path, b"{\"v\":1}", None).unwrap();
        for fp in [FailPoint::TornTempWrite, FailPoint::BeforeRename] {
            assert!(write_atomic(&path, b"{\"v\":2222}", Some(fp)).is_err());
            assert_eq!(fs::read(&path).unwrap(), b"{\"v\":1}");
            assert!(temp_path(&path).exists());
        }
        assert_eq!(sweep_temp_files(dir.path()).unwrap(), 1);
        assert!(!temp_path(&path).exists());
    }
}
