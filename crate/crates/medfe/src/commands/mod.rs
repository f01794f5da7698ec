//! Command implementations shared by the binary and the test suites.

pub mod dataset;
pub mod evaluate;
pub mod infer;
pub mod masks;
pub mod selftest;
pub mod train;
pub mod visualize;

use std::path::Path;

use medfe_core::tensor::{Shape, Tensor};
use medfe_core::trainer::Batch;

use crate::error::{CliError, CliResult};
use crate::manifest::SampleEntry;
use crate::ppm;

/// Stacks (1,c,h,w) tensors into one (n,c,h,w) batch.
pub fn stack(parts: &[Tensor]) -> Tensor {
    let s = parts[0].shape();
    let mut data = Vec::with_capacity(parts.len() * s.count());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(
        Shape::nchw(parts.len(), s.c(), s.h(), s.w()),
        data,
    )
    .expect("stack shape")
}

pub fn load_batch(entries: &[SampleEntry], indices: &[usize], size: usize) -> CliResult<Batch> {
    let mut images = Vec::new();
    let mut structures = Vec::new();
    let mut masks = Vec::new();
    for &i in indices {
        let e = &entries[i];
        let img = ppm::read_ppm(&e.image)?;
        let st = ppm::read_ppm(&e.structure)?;
        let mask = ppm::read_pgm(&e.mask)?;
        check_size(&e.image, &img, size)?;
        check_size(&e.structure, &st, size)?;
        check_size(&e.mask, &mask, size)?;
        images.push(img);
        structures.push(st);
        masks.push(mask);
    }
    Ok(Batch {
        image: stack(&images),
        structure: stack(&structures),
        mask: stack(&masks),
    })
}

fn check_size(path: &Path, t: &Tensor, size: usize) -> CliResult<()> {
    let s = t.shape();
    if s.h() != size || s.w() != size {
        return Err(CliError::Contract(format!(
            "{}: is {}x{}, run configured for {size}x{size}",
            path.display(),
            s.h(),
            s.w()
        )));
    }
    Ok(())
}
