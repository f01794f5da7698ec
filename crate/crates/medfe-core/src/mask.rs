//! Mask generation. Masks are single-channel maps with 1 = valid pixel,
//! 0 = hole.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::rng::SeedRng;
use crate::tensor::{Shape, Tensor};

/// Hole-to-image area ratio buckets of the evaluation protocol.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RatioBucket {
    Below10,
    B10to20,
    B20to30,
    B30to40,
    B40to50,
}

impl RatioBucket {
    pub const ALL: [RatioBucket; 5] = [
        RatioBucket::Below10,
        RatioBucket::B10to20,
        RatioBucket::B20to30,
        RatioBucket::B30to40,
        RatioBucket::B40to50,
    ];

    /// Inclusive-lower / exclusive-upper ratio bounds.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RatioBucket::Below10 => (0.0, 0.10),
            RatioBucket::B10to20 => (0.10, 0.20),
            RatioBucket::B20to30 => (0.20, 0.30),
            RatioBucket::B30to40 => (0.30, 0.40),
            RatioBucket::B40to50 => (0.40, 0.50),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RatioBucket::Below10 => "<10%",
            RatioBucket::B10to20 => "10-20%",
            RatioBucket::B20to30 => "20-30%",
            RatioBucket::B30to40 => "30-40%",
            RatioBucket::B40to50 => "40-50%",
        }
    }

    pub fn parse(s: &str) -> Option<RatioBucket> {
        RatioBucket::ALL.iter().copied().find(|b| b.label() == s)
    }

    pub fn of_ratio(r: f64) -> Option<RatioBucket> {
        RatioBucket::ALL
            .iter()
            .copied()
            .find(|b| r >= b.bounds().0 && r < b.bounds().1)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MaskKind {
    Center,
    Irregular,
}

#[derive(Clone, Copy, Debug)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub bucket: RatioBucket,
    pub seed: u64,
}

/// Nearest-neighbor mask resize (keeps values binary).
pub fn resize_mask(mask: &Tensor, target: (usize, usize)) -> Tensor {
    crate::tape::resize::resize_nearest_value(mask, target)
}

/// Hole fraction: 1 − mean(mask).
pub fn hole_ratio(mask: &Tensor) -> f64 {
    let sum: f64 = mask.data().iter().sum();
    1.0 - sum / mask.count() as f64
}

pub fn is_binary(mask: &Tensor) -> bool {
    mask.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Bounding box of one sample's hole (the zero region).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HoleBox {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

pub fn hole_bbox(mask: &Tensor, sample: usize) -> Option<HoleBox> {
    let s = mask.shape();
    let plane = s.h() * s.w();
    let data = &mask.data()[sample * s.c() * plane..sample * s.c() * plane + plane];
    let (mut y0, mut x0) = (usize::MAX, usize::MAX);
    let (mut y1, mut x1) = (0usize, 0usize);
    let mut any = false;
    for y in 0..s.h() {
        for x in 0..s.w() {
            if data[y * s.w() + x] == 0.0 {
                any = true;
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
    }
    any.then(|| HoleBox {
        y0,
        x0,
        h: y1 - y0 + 1,
        w: x1 - x0 + 1,
    })
}

/// Central square hole of side h/2 × w/2 (floor-centered for odd sizes).
pub fn gen_center_mask(h: usize, w: usize) -> Tensor {
    let hole_h = h / 2;
    let hole_w = w / 2;
    let y0 = (h - hole_h) / 2;
    let x0 = (w - hole_w) / 2;
    Tensor::from_fn(Shape::nchw(1, 1, h, w), |i| {
        let y = i / w;
        let x = i % w;
        if y >= y0 && y < y0 + hole_h && x >= x0 && x < x0 + hole_w {
            0.0
        } else {
            1.0
        }
    })
}

fn stamp_disk(grid: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, r: f64) {
    let y_lo = ((cy - r).max(0.0)) as usize;
    let y_hi = (((cy + r) as usize) + 1).min(h);
    let x_lo = ((cx - r).max(0.0)) as usize;
    let x_hi = (((cx + r) as usize) + 1).min(w);
    let r2 = r * r;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            if dy * dy + dx * dx <= r2 {
                grid[y * w + x] = 0.0;
            }
        }
    }
}

fn draw_stroke(grid: &mut [f64], h: usize, w: usize, rng: &mut SeedRng, shrink: f64) {
    let dim = h.min(w) as f64;
    let mut y = rng.uniform(0.0, h as f64);
    let mut x = rng.uniform(0.0, w as f64);
    let mut heading = rng.uniform(0.0, core::f64::consts::TAU);
    let steps = (rng.uniform(dim / 8.0, dim / 3.0) * shrink).max(2.0) as usize;
    let radius = (rng.uniform(dim / 64.0, dim / 24.0) * shrink).max(1.0);
    for _ in 0..steps {
        stamp_disk(grid, h, w, y, x, radius);
        heading += rng.uniform(-0.7, 0.7);
        y += crate::mathfn::sin(heading);
        x += crate::mathfn::cos(heading);
        y = y.clamp(0.0, h as f64 - 1.0);
        x = x.clamp(0.0, w as f64 - 1.0);
    }
}

/// Random-stroke mask whose hole ratio lands inside the bucket.
/// Deterministic per seed; strokes that would overshoot the bucket are
/// retried at a smaller scale.
pub fn gen_irregular_mask(h: usize, w: usize, bucket: RatioBucket, seed: u64) -> Result<Tensor> {
    contract!(h >= 8 && w >= 8, "irregular masks need at least 8x8");
    let (lo, hi) = bucket.bounds();
    // The lowest bucket has no positive lower bound; one stroke suffices,
    // but require a non-degenerate hole.
    let lo = lo.max(0.005);
    let mut rng = SeedRng::new(seed);
    let mut grid = vec![1.0f64; h * w];
    let area = (h * w) as f64;
    let ratio_of = |g: &[f64]| 1.0 - g.iter().sum::<f64>() / area;

    let mut attempts = 0usize;
    while ratio_of(&grid) < lo {
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::Contract(alloc::format!(
                "bucket {} unreachable in 1000 strokes at {}x{}",
                bucket.label(),
                h,
                w
            )));
        }
        let mut trial = grid.clone();
        // Shrink progressively as the ratio approaches the bucket so a
        // single stroke cannot jump across it.
        let room = (hi - ratio_of(&grid)).max(0.0);
        let shrink = (room * 12.0).clamp(0.2, 1.0);
        draw_stroke(&mut trial, h, w, &mut rng, shrink);
        if ratio_of(&trial) < hi {
            grid = trial;
        }
    }
    Tensor::new(Shape::nchw(1, 1, h, w), grid)
}

pub fn gen_mask(h: usize, w: usize, spec: MaskSpec) -> Result<Tensor> {
    match spec.kind {
        MaskKind::Center => Ok(gen_center_mask(h, w)),
        MaskKind::Irregular => gen_irregular_mask(h, w, spec.bucket, spec.seed),
    }
}

/// Stacks per-sample masks into one (n, 1, h, w) batch tensor.
pub fn stack_masks(masks: &[Tensor]) -> Result<Tensor> {
    contract!(!masks.is_empty(), "stack of zero masks");
    let s = masks[0].shape();
    let mut data = Vec::with_capacity(masks.len() * s.count());
    for m in masks {
        contract!(m.shape() == s, "mask shapes differ: {} vs {}", m.shape(), s);
        data.extend_from_slice(m.data());
    }
    Tensor::new(Shape::nchw(masks.len(), s.c(), s.h(), s.w()), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_mask_256_has_quarter_ratio() {
        let m = gen_center_mask(256, 256);
        assert_eq!(hole_ratio(&m), 0.25);
        // hole is exactly 128x128
        let b = hole_bbox(&m, 0).unwrap();
        assert_eq!((b.h, b.w, b.y0, b.x0), (128, 128, 64, 64));
    }

    #[test]
    fn center_mask_64_and_4_hand_cases() {
        let m = gen_center_mask(64, 64);
        let b = hole_bbox(&m, 0).unwrap();
        assert_eq!((b.h, b.w), (32, 32));

        let m4 = gen_center_mask(4, 4);
        let b4 = hole_bbox(&m4, 0).unwrap();
        assert_eq!((b4.y0, b4.x0, b4.h, b4.w), (1, 1, 2, 2));
        assert_eq!(m4.at(0, 0, 1, 1), 0.0);
        assert_eq!(m4.at(0, 0, 0, 0), 1.0);
    }

    #[test]
    fn irregular_masks_land_in_bucket_and_are_deterministic() {
        for bucket in RatioBucket::ALL {
            let (lo, hi) = bucket.bounds();
            for seed in 0..5 {
                let m = gen_irregular_mask(64, 64, bucket, seed).unwrap();
                let r = hole_ratio(&m);
                assert!(
                    r < hi && r >= lo.max(0.001),
                    "bucket {} seed {seed}: ratio {r}",
                    bucket.label()
                );
                assert!(is_binary(&m));
                let again = gen_irregular_mask(64, 64, bucket, seed).unwrap();
                assert_eq!(m.data(), again.data());
            }
        }
    }

    #[test]
    fn ratio_equals_one_minus_mean() {
        let m = gen_irregular_mask(32, 32, RatioBucket::B20to30, 3).unwrap();
        let mean: f64 = m.data().iter().sum::<f64>() / m.count() as f64;
        assert_eq!(hole_ratio(&m), 1.0 - mean);
    }

    #[test]
    fn bbox_of_holeless_mask_is_none() {
        let m = Tensor::ones(Shape::nchw(1, 1, 8, 8));
        assert!(hole_bbox(&m, 0).is_none());
    }
}
