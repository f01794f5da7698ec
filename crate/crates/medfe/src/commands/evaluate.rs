//! Per-bucket PSNR/SSIM evaluation of composited outputs over a manifest.

use std::path::Path;

use medfe_core::mask::{hole_ratio, RatioBucket};
use medfe_core::metrics::{metrics, to_unit};
use medfe_core::model::model_from_entries;

use crate::ckpt;
use crate::error::{CliError, CliResult};
use crate::manifest::read_manifest;
use crate::ppm;

#[derive(Default, Clone, Copy)]
struct Acc {
    psnr: f64,
    ssim: f64,
    count: usize,
}

/// Builds the per-bucket report from (bucket, metrics) pairs. Requested
/// buckets with no samples are reported as absent, never as zeros.
pub fn aggregate(
    rows: &[(RatioBucket, medfe_core::metrics::Metrics)],
    requested: &[RatioBucket],
) -> EvalReport {
    let mut accs = [Acc::default(); 5];
    let mut overall = Acc::default();
    for (bucket, m) in rows {
        let idx = RatioBucket::ALL.iter().position(|b| b == bucket).unwrap();
        accs[idx].psnr += m.psnr;
        accs[idx].ssim += m.ssim;
        accs[idx].count += 1;
        overall.psnr += m.psnr;
        overall.ssim += m.ssim;
        overall.count += 1;
    }
    let rows = requested
        .iter()
        .map(|b| {
            let idx = RatioBucket::ALL.iter().position(|x| x == b).unwrap();
            let a = accs[idx];
            let row = (a.count > 0).then(|| {
                (
                    a.psnr / a.count as f64,
                    a.ssim / a.count as f64,
                    a.count,
                )
            });
            (b.label().to_string(), row)
        })
        .collect();
    let overall = (overall.count > 0).then(|| {
        (
            overall.psnr / overall.count as f64,
            overall.ssim / overall.count as f64,
            overall.count,
        )
    });
    EvalReport { rows, overall }
}

pub struct EvalReport {
    /// (bucket label, Some((mean psnr, mean ssim, count)) or None when absent)
    pub rows: Vec<(String, Option<(f64, f64, usize)>)>,
    pub overall: Option<(f64, f64, usize)>,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut out = String::from("bucket\tcount\tpsnr\tssim\n");
        for (label, row) in &self.rows {
            match row {
                Some((p, s, n)) => {
                    out.push_str(&format!("{label}\t{n}\t{p:.4}\t{s:.6}\n"));
                }
                None => out.push_str(&format!("{label}\tabsent\t-\t-\n")),
            }
        }
        if let Some((p, s, n)) = self.overall {
            out.push_str(&format!("overall\t{n}\t{p:.4}\t{s:.6}\n"));
        }
        out
    }
}

pub fn run(checkpoint: &Path, manifest: &Path, buckets: &[String]) -> CliResult<EvalReport> {
    let requested: Vec<RatioBucket> = if buckets.is_empty() {
        RatioBucket::ALL.to_vec()
    } else {
        buckets
            .iter()
            .map(|b| {
                RatioBucket::parse(b)
                    .ok_or_else(|| CliError::Contract(format!("unknown bucket '{b}'")))
            })
            .collect::<CliResult<Vec<_>>>()?
    };

    let state = ckpt::read_entries(checkpoint)?;
    let model = model_from_entries(&state)?;
    let entries = read_manifest(manifest)?;

    let mut rows = Vec::new();
    for e in &entries {
        let image = ppm::read_ppm(&e.image)?;
        let mask = ppm::read_pgm(&e.mask)?;
        let ratio = hole_ratio(&mask);
        let Some(bucket) = RatioBucket::of_ratio(ratio) else {
            continue; // ratio above 50%: outside the protocol
        };
        if !requested.contains(&bucket) {
            continue;
        }
        let eval = model.generate(&image, &mask)?;
        let m = metrics(&to_unit(&eval.i_comp), &to_unit(&image))?;
        rows.push((bucket, m));
    }
    Ok(aggregate(&rows, &requested))
}
