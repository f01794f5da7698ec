//! Single-image inference: writes the raw output, the composited image,
//! and optionally the two branch color maps.

use std::fs;
use std::path::Path;

use medfe_core::model::model_from_entries;

use crate::ckpt;
use crate::error::{CliError, CliResult};
use crate::ppm;

pub fn run(
    checkpoint: &Path,
    image_path: &Path,
    mask_path: &Path,
    out_dir: &Path,
    emit_branches: bool,
) -> CliResult<()> {
    let image = ppm::read_ppm(image_path)?;
    let mask = ppm::read_pgm(mask_path)?;
    let s = image.shape();
    if s.h() % 32 != 0 || s.w() % 32 != 0 {
        return Err(CliError::Contract(format!(
            "input is {}x{}; sizes must be divisible by 32 — pad or crop the image \
             (e.g. to {}x{}) and retry",
            s.h(),
            s.w(),
            s.h().next_multiple_of(32),
            s.w().next_multiple_of(32)
        )));
    }
    if mask.shape().h() != s.h() || mask.shape().w() != s.w() {
        return Err(CliError::Contract(format!(
            "mask is {}x{}, image is {}x{}",
            mask.shape().h(),
            mask.shape().w(),
            s.h(),
            s.w()
        )));
    }

    let state = ckpt::read_entries(checkpoint)?;
    let model = model_from_entries(&state)?;
    let eval = model.generate(&image, &mask)?;

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    ppm::write_ppm(&out_dir.join("i_out.ppm"), &eval.i_out)?;
    ppm::write_ppm(&out_dir.join("i_comp.ppm"), &eval.i_comp)?;
    if emit_branches {
        ppm::write_ppm(&out_dir.join("i_ote.ppm"), &eval.i_ote)?;
        ppm::write_ppm(&out_dir.join("i_ost.ppm"), &eval.i_ost)?;
    }
    Ok(())
}
