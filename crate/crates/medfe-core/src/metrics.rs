//! PSNR and SSIM on [0, 1] images.
//!
//! SSIM follows the uniform-window variant: 7×7 box window over fully
//! interior positions, K1 = 0.01, K2 = 0.03, L = 1, biased window
//! statistics. The implementation walks summed-area tables; the direct
//! per-window formula lives in [`crate::oracle::ssim_naive`].

use alloc::vec;

use crate::error::{contract, Result};
use crate::mathfn::log10;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 7;
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Copy, Debug)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    contract!(
        a.shape() == b.shape(),
        "mse of {} against {}",
        a.shape(),
        b.shape()
    );
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / a.count() as f64)
}

/// 10·log10(1/MSE), capped at 100 dB when MSE < 1e−10.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * log10(1.0 / m))
}

/// Maps a [−1, 1] image to the [0, 1] domain the metrics are defined on.
pub fn to_unit(img: &Tensor) -> Tensor {
    img.map(|v| (v + 1.0) * 0.5)
}

/// Mean local SSIM over all valid window positions, channels, and batch.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    contract!(
        a.shape() == b.shape(),
        "ssim of {} against {}",
        a.shape(),
        b.shape()
    );
    let s = a.shape();
    let win = SSIM_WINDOW;
    contract!(
        s.h() >= win && s.w() >= win,
        "ssim needs at least {}x{} images, got {}",
        win,
        win,
        s
    );
    let c1 = (0.01f64) * 0.01;
    let c2 = (0.03f64) * 0.03;
    let area = (win * win) as f64;
    let (h, w) = (s.h(), s.w());
    let plane = h * w;
    let mut total = 0.0;
    let mut windows = 0usize;

    // Summed-area tables, one row/col of zero padding at the top/left.
    let tw = w + 1;
    let th = h + 1;
    let mut sa = vec![0.0f64; th * tw];
    let mut sb = vec![0.0f64; th * tw];
    let mut saa = vec![0.0f64; th * tw];
    let mut sbb = vec![0.0f64; th * tw];
    let mut sab = vec![0.0f64; th * tw];

    for ni in 0..s.n() {
        for ci in 0..s.c() {
            let pa = &a.data()[(ni * s.c() + ci) * plane..(ni * s.c() + ci + 1) * plane];
            let pb = &b.data()[(ni * s.c() + ci) * plane..(ni * s.c() + ci + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    let va = pa[y * w + x];
                    let vb = pb[y * w + x];
                    let i = (y + 1) * tw + (x + 1);
                    let up = y * tw + (x + 1);
                    let left = (y + 1) * tw + x;
                    let diag = y * tw + x;
                    sa[i] = va + sa[up] + sa[left] - sa[diag];
                    sb[i] = vb + sb[up] + sb[left] - sb[diag];
                    saa[i] = va * va + saa[up] + saa[left] - saa[diag];
                    sbb[i] = vb * vb + sbb[up] + sbb[left] - sbb[diag];
                    sab[i] = va * vb + sab[up] + sab[left] - sab[diag];
                }
            }
            let box_sum = |t: &[f64], y: usize, x: usize| -> f64 {
                t[(y + win) * tw + (x + win)] - t[y * tw + (x + win)] - t[(y + win) * tw + x]
                    + t[y * tw + x]
            };
            for y in 0..=(h - win) {
                for x in 0..=(w - win) {
                    let ma = box_sum(&sa, y, x) / area;
                    let mb = box_sum(&sb, y, x) / area;
                    let vaa = box_sum(&saa, y, x) / area - ma * ma;
                    let vbb = box_sum(&sbb, y, x) / area - mb * mb;
                    let vab = box_sum(&sab, y, x) / area - ma * mb;
                    let num = (2.0 * ma * mb + c1) * (2.0 * vab + c2);
                    let den = (ma * ma + mb * mb + c1) * (vaa + vbb + c2);
                    total += num / den;
                    windows += 1;
                }
            }
        }
    }
    Ok(total / windows as f64)
}

pub fn metrics(a: &Tensor, b: &Tensor) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn identical_images_hit_the_caps() {
        let a = Tensor::from_fn(Shape::nchw(1, 3, 8, 8), |i| (i % 7) as f64 / 7.0);
        let m = metrics(&a, &a).unwrap();
        assert_eq!(m.psnr, PSNR_CAP_DB);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_twenty_db() {
        let a = Tensor::from_fn(Shape::nchw(1, 1, 8, 8), |i| (i % 5) as f64 * 0.1);
        let b = a.map(|v| v + 0.1);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "psnr = {p}");
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        use crate::rng::SeedRng;
        let mut rng = SeedRng::new(11);
        let a = Tensor::from_fn(Shape::nchw(1, 1, 16, 16), |i| (i % 9) as f64 / 9.0);
        let mut last = f64::INFINITY;
        for level in 1..=5 {
            let sigma = level as f64 * 0.02;
            let noisy = Tensor::from_fn(a.shape(), |i| a.data()[i] + rng.normal() * sigma);
            let p = psnr(&a, &noisy).unwrap();
            assert!(p < last, "psnr not monotone: {p} !< {last}");
            last = p;
        }
    }
}
