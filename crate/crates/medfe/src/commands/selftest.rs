//! Built-in verification: oracle equivalence and gradient checks runnable
//! on any install, one verdict line per suite, nonzero exit on failure.

use medfe_core::equalize::{bpa_oracle, default_sigma, range_branch, spatial_branch, SpatialKernel};
use medfe_core::gradcheck::{grad_check, rel_err};
use medfe_core::layers::{Binding, PartialConvLayer};
use medfe_core::mask::gen_center_mask;
use medfe_core::metrics::{psnr, ssim, SSIM_WINDOW};
use medfe_core::oracle::{conv2d_naive, max_abs_diff, partial_conv_naive, ssim_naive};
use medfe_core::rng::SeedRng;
use medfe_core::tape::Tape;
use medfe_core::tensor::{Shape, Tensor};

use crate::error::{CliError, CliResult};

fn suite(name: &str, ok: Result<(), String>, failures: &mut usize) {
    match ok {
        Ok(()) => println!("{name}\tPASS"),
        Err(why) => {
            println!("{name}\tFAIL\t{why}");
            *failures += 1;
        }
    }
}

fn bpa_suite() -> Result<(), String> {
    let shapes = [
        Shape::nchw(1, 2, 4, 4),
        Shape::nchw(1, 4, 8, 8),
        Shape::nchw(2, 3, 5, 5),
    ];
    for shape in shapes {
        let sigma = default_sigma(shape.h(), shape.w());
        let kernel = SpatialKernel::new(shape.h(), shape.w(), sigma)
            .map_err(|e| e.to_string())?;
        for seed in 0..10u64 {
            let mut rng = SeedRng::new(4000 + seed);
            let x = rng.uniform_tensor(shape, -1.0, 1.0);
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let ys = spatial_branch(&tape, &xv, &kernel).map_err(|e| e.to_string())?;
            let yr = range_branch(&tape, &xv, false).map_err(|e| e.to_string())?;
            let (oys, oyr) = bpa_oracle(&x, sigma);
            let ds = max_abs_diff(ys.value(), &oys).map_err(|e| e.to_string())?;
            let dr = max_abs_diff(yr.value(), &oyr).map_err(|e| e.to_string())?;
            if ds > 1e-8 || dr > 1e-8 {
                return Err(format!("shape {shape} seed {seed}: diffs {ds:.2e}/{dr:.2e}"));
            }
        }
    }
    Ok(())
}

fn partial_conv_suite() -> Result<(), String> {
    let mut rng = SeedRng::new(5000);
    for seed in 0..5u64 {
        let mut r = SeedRng::new(seed);
        let mut layer =
            PartialConvLayer::new("pc", &mut rng, 2, 3, 3, 1).map_err(|e| e.to_string())?;
        layer.bias = r.uniform_tensor(Shape::nchw(1, 3, 1, 1), -0.3, 0.3);
        let x = r.uniform_tensor(Shape::nchw(1, 2, 6, 6), -1.0, 1.0);
        let mask = gen_center_mask(6, 6);
        let (expect, expect_mask) = partial_conv_naive(&x, &mask, &layer.weight, &layer.bias, 1)
            .map_err(|e| e.to_string())?;
        let tape = Tape::new();
        let mut bind = Binding::new(&tape, false);
        let (out, new_mask) = layer
            .forward(&tape, &mut bind, &tape.constant(x), &mask)
            .map_err(|e| e.to_string())?;
        let d = max_abs_diff(out.value(), &expect).map_err(|e| e.to_string())?;
        if d > 1e-10 {
            return Err(format!("seed {seed}: output diff {d:.2e}"));
        }
        if new_mask.data() != expect_mask.data() {
            return Err(format!("seed {seed}: mask rule disagrees"));
        }
    }
    Ok(())
}

fn conv_oracle_suite() -> Result<(), String> {
    let mut rng = SeedRng::new(6000);
    for (stride, pad, dil) in [(1, 1, 1), (2, 1, 1), (1, 2, 2)] {
        let x = rng.uniform_tensor(Shape::nchw(1, 2, 6, 6), -1.0, 1.0);
        let w = rng.uniform_tensor(Shape::nchw(3, 2, 3, 3), -0.5, 0.5);
        let expect = conv2d_naive(&x, &w, None, stride, pad, dil).map_err(|e| e.to_string())?;
        let tape = Tape::new();
        let y = tape
            .conv2d(&tape.constant(x.clone()), &tape.constant(w.clone()), None, stride, pad, dil)
            .map_err(|e| e.to_string())?;
        let d = max_abs_diff(y.value(), &expect).map_err(|e| e.to_string())?;
        if d > 1e-12 {
            return Err(format!("stride {stride} pad {pad} dil {dil}: diff {d:.2e}"));
        }
    }
    Ok(())
}

fn gradient_suite() -> Result<(), String> {
    let mut rng = SeedRng::new(7000);
    let x = rng.uniform_tensor(Shape::nchw(1, 2, 5, 5), -1.0, 1.0);
    let w = rng.uniform_tensor(Shape::nchw(2, 2, 3, 3), -0.5, 0.5);
    let report = grad_check(
        |t, v| {
            let c = t.conv2d(&v[0], &v[1], None, 1, 1, 1)?;
            let s = t.sigmoid(&c);
            t.mean_all(&s)
        },
        &[x.clone(), w],
        1e-5,
        1e-4,
        None,
        0,
    )
    .map_err(|e| e.to_string())?;
    if !report.pass() {
        return Err(format!("conv+sigmoid check: {:.2e}", report.max_rel_err));
    }

    // negative control: a corrupted gradient rule must fail
    let report = grad_check(
        |t, v| {
            let y = t.mul(&v[0], &v[0])?;
            t.mean_all(&y)
        },
        &[x],
        1e-5,
        1e-4,
        None,
        1,
    )
    .map_err(|e| e.to_string())?;
    let corrupted = report.inputs[0]
        .coords
        .iter()
        .map(|c| rel_err(1.5 * c.analytic, c.numeric))
        .fold(0.0f64, f64::max);
    if corrupted <= 1e-4 {
        return Err("negative control failed to fail".into());
    }
    Ok(())
}

fn metrics_suite() -> Result<(), String> {
    let mut rng = SeedRng::new(8000);
    let a = rng.uniform_tensor(Shape::nchw(1, 3, 12, 12), 0.0, 1.0);
    if psnr(&a, &a).map_err(|e| e.to_string())? != 100.0 {
        return Err("identity psnr is not capped at 100".into());
    }
    let b = a.map(|v| v + 0.1);
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    if (p - 20.0).abs() > 1e-9 {
        return Err(format!("+0.1 offset gave {p} dB, expected 20"));
    }
    let c = Tensor::from_fn(a.shape(), |i| (a.data()[i] + rng.normal() * 0.05).clamp(0.0, 1.0));
    let fast = ssim(&a, &c).map_err(|e| e.to_string())?;
    let slow = ssim_naive(&a, &c, SSIM_WINDOW).map_err(|e| e.to_string())?;
    if (fast - slow).abs() > 1e-8 {
        return Err(format!("ssim {fast} vs oracle {slow}"));
    }
    Ok(())
}

pub fn run() -> CliResult<()> {
    let mut failures = 0usize;
    suite("bpa-oracle", bpa_suite(), &mut failures);
    suite("partial-conv-oracle", partial_conv_suite(), &mut failures);
    suite("conv-oracle", conv_oracle_suite(), &mut failures);
    suite("gradients", gradient_suite(), &mut failures);
    suite("metrics", metrics_suite(), &mut failures);
    if failures > 0 {
        return Err(CliError::Numerical(format!("{failures} self-test suite(s) failed")));
    }
    Ok(())
}
