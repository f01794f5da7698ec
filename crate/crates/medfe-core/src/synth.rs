//! Procedural synthetic samples: piecewise-constant polygon structure
//! plus band-limited sinusoidal texture, all in [−1, 1] and deterministic
//! per seed. Desk-scale stand-in for photographic corpora.

use alloc::vec::Vec;

use crate::mask::gen_center_mask;
use crate::mathfn::sin;
use crate::rng::SeedRng;
use crate::smooth::structure_image_default;
use crate::tensor::{Shape, Tensor};

/// One training/evaluation sample: image, its structure image, and a mask.
#[derive(Clone)]
pub struct Sample {
    pub image: Tensor,
    pub structure: Tensor,
    pub mask: Tensor,
}

struct Polygon {
    verts: Vec<(f64, f64)>,
    color: [f64; 3],
}

impl Polygon {
    /// Convex: vertices are generated in angular order around the center.
    fn contains(&self, y: f64, x: f64) -> bool {
        let m = self.verts.len();
        let mut sign = 0.0f64;
        for i in 0..m {
            let (y0, x0) = self.verts[i];
            let (y1, x1) = self.verts[(i + 1) % m];
            let cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
            if cross != 0.0 {
                if sign == 0.0 {
                    sign = cross;
                } else if (cross > 0.0) != (sign > 0.0) {
                    return false;
                }
            }
        }
        true
    }
}

/// Deterministic procedural image in [−1, 1], shape (1, 3, h, w).
pub fn synth_image(seed: u64, size: (usize, usize)) -> Tensor {
    let (h, w) = size;
    let mut rng = SeedRng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let base = [
        rng.uniform(-0.7, 0.7),
        rng.uniform(-0.7, 0.7),
        rng.uniform(-0.7, 0.7),
    ];
    let n_poly = 3 + rng.usize_below(5);
    let dim = h.min(w) as f64;
    let mut polys = Vec::with_capacity(n_poly);
    for _ in 0..n_poly {
        let cy = rng.uniform(0.0, h as f64);
        let cx = rng.uniform(0.0, w as f64);
        let radius = rng.uniform(dim / 8.0, dim / 2.5);
        let nv = 3 + rng.usize_below(4);
        let phase = rng.uniform(0.0, core::f64::consts::TAU);
        let verts = (0..nv)
            .map(|i| {
                let ang = phase + core::f64::consts::TAU * i as f64 / nv as f64;
                let r = radius * rng.uniform(0.6, 1.0);
                (cy + r * sin(ang), cx + r * crate::mathfn::cos(ang))
            })
            .collect();
        polys.push(Polygon {
            verts,
            color: [
                rng.uniform(-0.9, 0.9),
                rng.uniform(-0.9, 0.9),
                rng.uniform(-0.9, 0.9),
            ],
        });
    }
    // Band-limited shared-luminance texture.
    let n_waves = 3;
    let waves: Vec<(f64, f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            (
                rng.uniform(0.04, 0.12),                    // amplitude
                rng.uniform(2.0, 8.0),                      // cycles over width
                rng.uniform(2.0, 8.0),                      // cycles over height
                rng.uniform(0.0, core::f64::consts::TAU),   // phase
            )
        })
        .collect();

    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut v = base[c];
                for p in &polys {
                    if p.contains(y as f64 + 0.5, x as f64 + 0.5) {
                        v = p.color[c];
                    }
                }
                for &(amp, fx, fy, phase) in &waves {
                    v += amp
                        * sin(core::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                            + phase);
                }
                data.push(v.clamp(-1.0, 1.0));
            }
        }
    }
    Tensor::new(Shape::nchw(1, 3, h, w), data).expect("synth image shape")
}

/// Full sample: image, structure image, and the default center mask.
pub fn synth_sample(seed: u64, size: (usize, usize)) -> Sample {
    let image = synth_image(seed, size);
    let structure = structure_image_default(&image);
    let mask = gen_center_mask(size.0, size.1);
    Sample {
        image,
        structure,
        mask,
    }
}
