//! Feature-map visualization: renders the intermediate features to color
//! images, named after the pipeline stages (input, texture, filled
//! texture, fused, output, structure, filled structure, equalized).

use std::fs;
use std::path::Path;

use medfe_core::layers::{Binding, Conv2dLayer};
use medfe_core::model::{model_from_entries, MEDFEModel};
use medfe_core::tape::{ResizeMode, Tape};
use medfe_core::tensor::{Shape, Tensor};

use crate::ckpt;
use crate::error::{CliError, CliResult};
use crate::ppm;

/// Learned 1×1 head → tanh → color image.
fn render_with_head(head: &Conv2dLayer, feature: &Tensor) -> CliResult<Tensor> {
    let tape = Tape::new();
    let mut bind = Binding::new(&tape, false);
    let f = tape.constant(feature.clone());
    let mapped = head.forward(&tape, &mut bind, &f)?;
    Ok(tape.tanh(&mapped).value().clone())
}

/// Per-channel-mean fallback for features without a trained head:
/// min/max-normalized to [−1, 1] and replicated across RGB.
fn render_mean(feature: &Tensor) -> Tensor {
    let s = feature.shape();
    let plane = s.h() * s.w();
    let mut mean = vec![0.0f64; plane];
    for c in 0..s.c() {
        for p in 0..plane {
            mean[p] += feature.data()[c * plane + p];
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &mut mean {
        *v /= s.c() as f64;
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = (hi - lo).max(1e-12);
    let mut data = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        for v in &mean {
            data.push(((v - lo) / span) * 2.0 - 1.0);
        }
    }
    Tensor::new(Shape::nchw(1, 3, s.h(), s.w()), data).expect("render shape")
}

fn upscale(img: &Tensor, target: (usize, usize)) -> Tensor {
    let tape = Tape::new();
    let v = tape.constant(img.clone());
    tape.resize(&v, ResizeMode::Nearest, target)
        .expect("upscale")
        .value()
        .clone()
}

fn write_panel(out_dir: &Path, name: &str, img: &Tensor, target: (usize, usize)) -> CliResult<()> {
    let scaled = if (img.shape().h(), img.shape().w()) == target {
        img.clone()
    } else {
        upscale(img, target)
    };
    ppm::write_ppm(&out_dir.join(name), &scaled)
}

pub fn run(checkpoint: &Path, image_path: &Path, mask_path: &Path, out_dir: &Path) -> CliResult<()> {
    let image = ppm::read_ppm(image_path)?;
    let mask = ppm::read_pgm(mask_path)?;
    let state = ckpt::read_entries(checkpoint)?;
    let model: MEDFEModel = model_from_entries(&state)?;
    let eval = model.generate(&image, &mask)?;

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let s = image.shape();
    let target = (s.h(), s.w());

    // input with the hole blacked out
    let plane = s.h() * s.w();
    let masked = Tensor::from_fn(s, |idx| {
        let p = idx % plane;
        if mask.data()[p] == 1.0 {
            image.data()[idx]
        } else {
            -1.0
        }
    });
    write_panel(out_dir, "a_input.ppm", &masked, target)?;
    write_panel(
        out_dir,
        "b_texture.ppm",
        &render_with_head(&model.gen.head_te, &eval.f_te)?,
        target,
    )?;
    write_panel(
        out_dir,
        "c_texture_filled.ppm",
        &render_with_head(&model.gen.head_te, &eval.f_fte)?,
        target,
    )?;
    write_panel(out_dir, "d_fused.ppm", &render_mean(&eval.f_sf), target)?;
    write_panel(out_dir, "e_output.ppm", &eval.i_out, target)?;
    write_panel(
        out_dir,
        "f_structure.ppm",
        &render_with_head(&model.gen.head_st, &eval.f_st)?,
        target,
    )?;
    write_panel(
        out_dir,
        "g_structure_filled.ppm",
        &render_with_head(&model.gen.head_st, &eval.f_fst)?,
        target,
    )?;
    write_panel(out_dir, "h_equalized.ppm", &render_mean(&eval.f_equal), target)?;
    Ok(())
}
