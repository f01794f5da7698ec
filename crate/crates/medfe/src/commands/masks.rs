//! Standalone mask generation.

use std::fs;
use std::path::Path;

use medfe_core::mask::{gen_mask, MaskKind, MaskSpec, RatioBucket};

use crate::error::{CliError, CliResult};
use crate::ppm;

pub fn run(
    kind: &str,
    bucket: Option<&str>,
    count: usize,
    size: usize,
    seed: u64,
    out_dir: &Path,
) -> CliResult<()> {
    let kind = match kind {
        "center" => MaskKind::Center,
        "irregular" => MaskKind::Irregular,
        other => {
            return Err(CliError::Contract(format!(
                "unknown mask kind '{other}' (expected center or irregular)"
            )))
        }
    };
    let bucket = match (kind, bucket) {
        (MaskKind::Center, _) => RatioBucket::B20to30, // unused for center
        (MaskKind::Irregular, Some(label)) => RatioBucket::parse(label).ok_or_else(|| {
            CliError::Contract(format!(
                "unknown bucket '{label}' (expected one of {
                })",
                RatioBucket::ALL
                    .iter()
                    .map(|b| b.label())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?,
        (MaskKind::Irregular, None) => {
            return Err(CliError::Contract(
                "irregular masks need --bucket".into(),
            ))
        }
    };
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    for i in 0..count {
        let mask = gen_mask(
            size,
            size,
            MaskSpec {
                kind,
                bucket,
                seed: seed + i as u64,
            },
        )?;
        ppm::write_pgm(&out_dir.join(format!("mask_{i:04}.pgm")), &mask)?;
    }
    Ok(())
}
