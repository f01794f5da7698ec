//! Synthetic dataset generation: images, structure images, masks, and
//! the manifest tying them together. Sample generation fans out over
//! worker threads (capped by MEDFE_THREADS); each sample derives from
//! its own seed, so the corpus is identical at any worker count.

use std::fs;
use std::path::Path;
use std::thread;

use medfe_core::mask::{gen_mask, MaskKind, MaskSpec, RatioBucket};
use medfe_core::synth::synth_sample;

use crate::config::max_threads;
use crate::error::{CliError, CliResult};
use crate::manifest::write_manifest;
use crate::ppm;

#[derive(Clone, Copy)]
pub enum MaskChoice {
    Center,
    Bucket(RatioBucket),
    /// Cycle through all five buckets by sample index.
    Mixed,
}

impl MaskChoice {
    pub fn parse(s: &str) -> CliResult<MaskChoice> {
        if s == "center" {
            return Ok(MaskChoice::Center);
        }
        if s == "mixed" {
            return Ok(MaskChoice::Mixed);
        }
        RatioBucket::parse(s)
            .map(MaskChoice::Bucket)
            .ok_or_else(|| {
                CliError::Contract(format!(
                    "unknown mask choice '{s}' (center, mixed, or a bucket label)"
                ))
            })
    }

    fn spec(self, index: usize, seed: u64) -> MaskSpec {
        match self {
            MaskChoice::Center => MaskSpec {
                kind: MaskKind::Center,
                bucket: RatioBucket::B20to30,
                seed,
            },
            MaskChoice::Bucket(b) => MaskSpec {
                kind: MaskKind::Irregular,
                bucket: b,
                seed,
            },
            MaskChoice::Mixed => MaskSpec {
                kind: MaskKind::Irregular,
                bucket: RatioBucket::ALL[index % RatioBucket::ALL.len()],
                seed,
            },
        }
    }
}

pub fn run(
    count: usize,
    size: usize,
    seed: u64,
    mask: MaskChoice,
    out_dir: &Path,
) -> CliResult<()> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let workers = max_threads().min(count.max(1));
    let result: CliResult<()> = thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let out_dir = out_dir.to_path_buf();
            handles.push(scope.spawn(move || -> CliResult<()> {
                let mut i = w;
                while i < count {
                    let sample = synth_sample(seed + i as u64, (size, size));
                    let m = gen_mask(size, size, mask.spec(i, seed + 7_000_003 + i as u64))?;
                    ppm::write_ppm(&out_dir.join(format!("img_{i:04}.ppm")), &sample.image)?;
                    ppm::write_ppm(
                        &out_dir.join(format!("struct_{i:04}.ppm")),
                        &sample.structure,
                    )?;
                    ppm::write_pgm(&out_dir.join(format!("mask_{i:04}.pgm")), &m)?;
                    i += workers;
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("dataset worker panicked")?;
        }
        Ok(())
    });
    result?;

    let rows: Vec<(String, String, String)> = (0..count)
        .map(|i| {
            (
                format!("img_{i:04}.ppm"),
                format!("struct_{i:04}.ppm"),
                format!("mask_{i:04}.pgm"),
            )
        })
        .collect();
    write_manifest(&out_dir.join("manifest.tsv"), &rows)
}
