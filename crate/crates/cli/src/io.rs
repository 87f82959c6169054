//! File loading and writing shared by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use corefkit::annotation::Clustering;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Marks an error as a problem with the input rather than the filesystem.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Files under `path` (itself if a file) with the given extension, sorted.
pub fn files_with_ext(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == ext) {
                out.push(p);
            }
        }
    }
    out.sort();
    if out.is_empty() {
        bail!(invalid(format!("no *.{ext} files under {}", path.display())));
    }
    Ok(out)
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Clustering),
    Many(Vec<Clustering>),
}

/// Clusterings from a file (one object or an array) or a directory tree of
/// such files, in path order.
pub fn read_clusterings(path: &Path) -> Result<Vec<Clustering>> {
    let mut out = Vec::new();
    for file in files_with_ext(path, "json")? {
        match read_json::<OneOrMany>(&file)? {
            OneOrMany::One(c) => out.push(c),
            OneOrMany::Many(cs) => out.extend(cs),
        }
    }
    Ok(out)
}

pub fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes to `path`, or stdout when it is `-`.
pub fn write_out(path: &Path, text: &str) -> Result<()> {
    if path == Path::new("-") {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.flush()?;
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
