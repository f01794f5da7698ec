//! Dataset manifests: one sample per line, tab-separated relative paths
//! (image, structure, mask), resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct SampleEntry {
    pub image: PathBuf,
    pub structure: PathBuf,
    pub mask: PathBuf,
}

pub fn read_manifest(path: &Path) -> CliResult<Vec<SampleEntry>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(CliError::Io(format!(
                "{}:{}: expected 3 tab-separated paths, got {}",
                path.display(),
                lineno + 1,
                parts.len()
            )));
        }
        entries.push(SampleEntry {
            image: base.join(parts[0]),
            structure: base.join(parts[1]),
            mask: base.join(parts[2]),
        });
    }
    if entries.is_empty() {
        return Err(CliError::Io(format!(
            "{}: manifest has no samples",
            path.display()
        )));
    }
    Ok(entries)
}

/// Writes a manifest with paths relative to its own directory.
pub fn write_manifest(path: &Path, rows: &[(String, String, String)]) -> CliResult<()> {
    let mut text = String::new();
    for (img, st, mask) in rows {
        text.push_str(&format!("{img}\t{st}\t{mask}\n"));
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
