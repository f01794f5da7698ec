//! Edge-aware smoothing used to derive structure images.
//!
//! Each iteration moves every pixel toward a weighted average of its
//! 4-neighbors, with weights exp(−|ΔI|²/θ²) on the mean squared color
//! difference. Strong edges get near-zero weights and survive; texture
//! and noise average out.

use crate::mathfn::{abs, exp};
use crate::tensor::Tensor;

pub const DEFAULT_ITERATIONS: usize = 10;
pub const DEFAULT_STRENGTH: f64 = 0.9;
pub const DEFAULT_THETA: f64 = 0.1;

pub fn structure_image(img: &Tensor, iterations: usize, strength: f64, theta: f64) -> Tensor {
    let s = img.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let plane = h * w;
    let inv_t2 = 1.0 / (theta * theta);
    let mut cur = img.data().to_vec();
    let mut next = cur.clone();
    let mut acc = alloc::vec![0.0f64; c];

    for _ in 0..iterations {
        for ni in 0..n {
            let base = ni * c * plane;
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let mut wsum = 1.0; // the pixel itself, weight 1
                    for ci in 0..c {
                        acc[ci] = cur[base + ci * plane + p];
                    }
                    let neighbors = [
                        (y > 0, p.wrapping_sub(w)),
                        (y + 1 < h, p + w),
                        (x > 0, p.wrapping_sub(1)),
                        (x + 1 < w, p + 1),
                    ];
                    for (ok, q) in neighbors {
                        if !ok {
                            continue;
                        }
                        let mut d2 = 0.0;
                        for ci in 0..c {
                            let d = cur[base + ci * plane + p] - cur[base + ci * plane + q];
                            d2 += d * d;
                        }
                        d2 /= c as f64;
                        let wq = exp(-d2 * inv_t2);
                        wsum += wq;
                        for ci in 0..c {
                            acc[ci] += wq * cur[base + ci * plane + q];
                        }
                    }
                    for ci in 0..c {
                        let old = cur[base + ci * plane + p];
                        let avg = acc[ci] / wsum;
                        next[base + ci * plane + p] = old + strength * (avg - old);
                    }
                }
            }
        }
        core::mem::swap(&mut cur, &mut next);
    }
    Tensor::new(s, cur).expect("structure image shape")
}

pub fn structure_image_default(img: &Tensor) -> Tensor {
    structure_image(img, DEFAULT_ITERATIONS, DEFAULT_STRENGTH, DEFAULT_THETA)
}

/// Anisotropic total variation: Σ |∂x| + |∂y| over channels and batch.
pub fn total_variation(img: &Tensor) -> f64 {
    let s = img.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let plane = h * w;
    let d = img.data();
    let mut tv = 0.0;
    for nc in 0..n * c {
        let p = &d[nc * plane..(nc + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    tv += abs(p[y * w + x + 1] - p[y * w + x]);
                }
                if y + 1 < h {
                    tv += abs(p[(y + 1) * w + x] - p[y * w + x]);
                }
            }
        }
    }
    tv
}

/// Population variance; used by the smoothing tests.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean: f64 = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

#[allow(unused_imports)]
use alloc::vec;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;
    use crate::tensor::Shape;

    #[test]
    fn constant_image_is_a_fixed_point() {
        let img = Tensor::full(Shape::nchw(1, 3, 8, 8), 0.3);
        let out = structure_image_default(&img);
        assert_eq!(out.max_abs_diff(&img).unwrap(), 0.0);
    }

    #[test]
    fn tv_never_increases_on_textured_input() {
        let mut rng = SeedRng::new(5);
        for _ in 0..5 {
            let img = rng.uniform_tensor(Shape::nchw(1, 3, 16, 16), -1.0, 1.0);
            let out = structure_image_default(&img);
            assert!(total_variation(&out) <= total_variation(&img));
        }
    }

    #[test]
    fn step_edge_survives_while_noise_dies() {
        let mut rng = SeedRng::new(9);
        let (h, w) = (16, 16);
        let sigma = 0.05;
        let noise: Vec<f64> = (0..h * w).map(|_| rng.normal() * sigma).collect();
        let img = Tensor::from_fn(Shape::nchw(1, 1, h, w), |i| {
            let x = i % w;
            let edge = if x < w / 2 { -0.5 } else { 0.5 };
            edge + noise[i]
        });
        let out = structure_image(&img, 10, DEFAULT_STRENGTH, DEFAULT_THETA);

        // Edge stays within one pixel of x = w/2: for each row the largest
        // horizontal jump must sit at column w/2 − 1 ± 1.
        for y in 0..h {
            let mut best = (0usize, 0.0f64);
            for x in 0..w - 1 {
                let jump = (out.at(0, 0, y, x + 1) - out.at(0, 0, y, x)).abs();
                if jump > best.1 {
                    best = (x, jump);
                }
            }
            let expected = w / 2 - 1;
            assert!(
                best.0 + 1 >= expected && best.0 <= expected + 1,
                "row {y}: edge at {} expected near {expected}",
                best.0
            );
        }

        // Residual high-frequency variance drops at least 10x, measured
        // per flat half (away from the edge columns).
        let mut before = Vec::new();
        let mut after = Vec::new();
        for y in 0..h {
            for x in 0..w / 2 - 1 {
                before.push(img.at(0, 0, y, x));
                after.push(out.at(0, 0, y, x));
            }
        }
        let vb = variance(&before);
        let va = variance(&after);
        assert!(va * 10.0 <= vb, "variance only dropped {vb} -> {va}");
    }

    #[test]
    fn near_idempotent_in_the_limit() {
        let mut rng = SeedRng::new(21);
        let img = rng.uniform_tensor(Shape::nchw(1, 3, 12, 12), -1.0, 1.0);
        let once = structure_image_default(&img);
        let twice = structure_image_default(&once);
        let d1 = once.max_abs_diff(&img).unwrap();
        let d2 = twice.max_abs_diff(&once).unwrap();
        assert!(d2 <= d1, "second application moved more: {d2} > {d1}");
    }
}
