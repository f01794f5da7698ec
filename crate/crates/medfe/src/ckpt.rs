//! Checkpoint files: the core container codec plus filesystem plumbing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use medfe_core::checkpoint;
use medfe_core::tensor::Tensor;

use crate::error::{CliError, CliResult};

pub fn write_entries(path: &Path, entries: &[(String, Tensor)]) -> CliResult<()> {
    fs::write(path, checkpoint::encode(entries)).map_err(|e| CliError::io(path, e))
}

pub fn read_entries(path: &Path) -> CliResult<BTreeMap<String, Tensor>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let entries = checkpoint::decode(&bytes)?;
    Ok(entries.into_iter().collect())
}
