//! Feature equalization: fusion of the branch outputs, channel
//! reweighing, and the bilateral propagation activation (BPA).
//!
//! BPA combines a Gaussian-weighted global spatial average with a
//! dot-product-weighted local range aggregation over 3×3 neighborhoods,
//! fused back to the input width by a learned 1×1 convolution. The
//! brute-force evaluation of the two branches lives in [`bpa_oracle`].

use alloc::format;
use alloc::string::String;

use crate::error::{contract, Result};
use crate::layers::{Binding, Conv2dLayer, SeBlock};
use crate::mathfn::exp;
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Side of the local range neighborhood v.
pub const LOCAL_K: usize = 3;

/// Default Gaussian width: σ = max(h, w)/4.
pub fn default_sigma(h: usize, w: usize) -> f64 {
    h.max(w) as f64 / 4.0
}

/// Precomputed h·w × h·w Gaussian distance kernel:
/// entry (i, j) = exp(−‖pos_j − pos_i‖² / (2σ²)).
pub struct SpatialKernel {
    pub h: usize,
    pub w: usize,
    pub sigma: f64,
    pub weights: Tensor,
}

impl SpatialKernel {
    pub fn new(h: usize, w: usize, sigma: f64) -> Result<Self> {
        contract!(sigma > 0.0, "spatial kernel sigma must be positive");
        let hw = h * w;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let weights = Tensor::from_fn(Shape::nchw(1, 1, hw, hw), |idx| {
            let i = idx / hw;
            let j = idx % hw;
            let (iy, ix) = ((i / w) as f64, (i % w) as f64);
            let (jy, jx) = ((j / w) as f64, (j % w) as f64);
            let d2 = (jy - iy) * (jy - iy) + (jx - ix) * (jx - ix);
            exp(-d2 * inv)
        });
        Ok(SpatialKernel {
            h,
            w,
            sigma,
            weights,
        })
    }
}

/// Global branch: y^s_i = (1/N)·Σ_j g(‖j−i‖)·x_j over the whole map.
pub fn spatial_branch(tape: &Tape, x: &Var, kernel: &SpatialKernel) -> Result<Var> {
    let s = x.shape();
    contract!(
        s.h() == kernel.h && s.w() == kernel.w,
        "kernel built for {}x{}, feature is {}",
        kernel.h,
        kernel.w,
        s
    );
    let hw = s.h() * s.w();
    let n_pos = hw as f64;
    // Each (n, c) row is a 1×hw vector; the kernel is symmetric, so
    // right-multiplying by it sums g(‖j−i‖)·x_j into position i.
    let rows = tape.reshape(x, Shape([s.n(), s.c(), 1, hw]))?;
    let k = tape.constant(kernel.weights.clone());
    let mixed = tape.matmul(&rows, &k)?;
    let back = tape.reshape(&mixed, s)?;
    Ok(tape.scale(&back, 1.0 / n_pos))
}

/// Local branch: y^r_i = C⁻¹·Σ_{j∈v(i)} (x_iᵀx_j)·x_j over the 3×3
/// neighborhood, zero-padded at borders. With `softmax = false` the
/// normalization is C = N (the number of positions); with `softmax =
/// true` the dot products are softmax-normalized over j, which is the
/// non-local-attention variant kept for ablations.
pub fn range_branch(tape: &Tape, x: &Var, softmax: bool) -> Result<Var> {
    let s = x.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let hw = h * w;

    let neighbors = tape.unfold(x, LOCAL_K)?; // (n, hw, kk, c)
    let centers = tape.permute(x, [0, 2, 3, 1])?; // (n, h, w, c)
    let centers = tape.reshape(&centers, Shape([n, hw, 1, c]))?;

    let prods = tape.mul(&neighbors, &centers)?; // broadcast over kk
    let dots = tape.sum(&prods, &[3])?; // (n, hw, kk, 1)

    let weights = if softmax {
        // Shift by the neighborhood mean (softmax is shift-invariant)
        // to keep the exponentials tame.
        let m = tape.mean(&dots, &[2])?;
        let shifted = tape.sub(&dots, &m)?;
        let e = tape.exp(&shifted);
        let denom = tape.sum(&e, &[2])?;
        tape.div(&e, &denom)?
    } else {
        dots
    };

    let weighted = tape.mul(&weights, &neighbors)?; // (n, hw, kk, c)
    let summed = tape.sum(&weighted, &[2])?; // (n, hw, 1, c)
    let grid = tape.reshape(&summed, Shape([n, h, w, c]))?;
    let out = tape.permute(&grid, [0, 3, 1, 2])?;
    if softmax {
        Ok(out)
    } else {
        Ok(tape.scale(&out, 1.0 / hw as f64))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BpaConfig {
    /// Gaussian width of the spatial branch; `None` picks max(h, w)/4.
    pub sigma: Option<f64>,
    /// Softmax range normalization (non-local ablation) instead of 1/N.
    pub softmax_range: bool,
    /// Add the input back onto the fused output (non-local-style ablation).
    pub residual: bool,
}

impl Default for BpaConfig {
    fn default() -> Self {
        BpaConfig {
            sigma: None,
            softmax_range: false,
            residual: false,
        }
    }
}

/// Both branches concatenated on channels, fused back to the input width
/// by the learned 1×1 convolution `q` (no bias).
pub fn bpa(
    tape: &Tape,
    bind: &mut Binding,
    x: &Var,
    q: &Conv2dLayer,
    kernel: &SpatialKernel,
    cfg: &BpaConfig,
) -> Result<Var> {
    let ys = spatial_branch(tape, x, kernel)?;
    let yr = range_branch(tape, x, cfg.softmax_range)?;
    let cat = tape.concat(1, &[&ys, &yr])?;
    let fused = q.forward(tape, bind, &cat)?;
    if cfg.residual {
        tape.add(&fused, x)
    } else {
        Ok(fused)
    }
}

/// Literal nested-loop evaluation of the two BPA branches with C = N.
/// Returns (y^s, y^r). Quadratic in the position count; small inputs only.
pub fn bpa_oracle(x: &Tensor, sigma: f64) -> (Tensor, Tensor) {
    let s = x.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let n_pos = (h * w) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let half = (LOCAL_K / 2) as isize;

    let mut ys_data = alloc::vec![0.0f64; s.count()];
    let mut yr_data = alloc::vec![0.0f64; s.count()];

    for ni in 0..n {
        for iy in 0..h {
            for ix in 0..w {
                // spatial: every position j in the full domain
                for jy in 0..h {
                    for jx in 0..w {
                        let d2 = (jy as f64 - iy as f64) * (jy as f64 - iy as f64)
                            + (jx as f64 - ix as f64) * (jx as f64 - ix as f64);
                        let g = exp(-d2 * inv);
                        for ci in 0..c {
                            ys_data[s.offset(ni, ci, iy, ix)] +=
                                g * x.at(ni, ci, jy, jx) / n_pos;
                        }
                    }
                }
                // range: 3×3 neighborhood, dot-product pairwise term
                for dy in -half..=half {
                    for dx in -half..=half {
                        let jy = iy as isize + dy;
                        let jx = ix as isize + dx;
                        if jy < 0 || jy >= h as isize || jx < 0 || jx >= w as isize {
                            continue;
                        }
                        let (jy, jx) = (jy as usize, jx as usize);
                        let mut dot = 0.0;
                        for ci in 0..c {
                            dot += x.at(ni, ci, iy, ix) * x.at(ni, ci, jy, jx);
                        }
                        for ci in 0..c {
                            yr_data[s.offset(ni, ci, iy, ix)] +=
                                dot * x.at(ni, ci, jy, jx) / n_pos;
                        }
                    }
                }
            }
        }
    }
    let ys = Tensor::new(s, ys_data).expect("oracle shape");
    let yr = Tensor::new(s, yr_data).expect("oracle shape");
    (ys, yr)
}

/// Fusion + equalization parameters of the generator. The spatial kernel
/// is not stored here: it depends on the feature size, so callers build
/// (and may cache) one per size.
pub struct EqualizeParams {
    /// 1×1 fusion of concat(F_fte, F_fst) down to the branch width.
    pub fuse: Conv2dLayer,
    pub se: SeBlock,
    /// BPA's q: 1×1, 2c → c, no bias.
    pub q: Conv2dLayer,
    pub cfg: BpaConfig,
}

impl EqualizeParams {
    pub fn new(name: &str, rng: &mut SeedRng, channels: usize, cfg: BpaConfig) -> Result<Self> {
        Ok(EqualizeParams {
            fuse: Conv2dLayer::new(
                &format!("{name}.fuse"),
                rng,
                2 * channels,
                channels,
                1,
                1,
                0,
                1,
                true,
            ),
            se: SeBlock::new(&format!("{name}.se"), rng, channels)?,
            q: Conv2dLayer::new(
                &format!("{name}.q"),
                rng,
                2 * channels,
                channels,
                1,
                1,
                0,
                1,
                false,
            ),
            cfg,
        })
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fuse.visit(f);
        self.se.visit(f);
        self.q.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fuse.visit_mut(f);
        self.se.visit_mut(f);
        self.q.visit_mut(f);
    }

    pub fn name(&self) -> String {
        self.fuse
            .name
            .strip_suffix(".fuse")
            .unwrap_or(&self.fuse.name)
            .into()
    }
}

/// Simple fusion then equalization. Returns (F_sf, F_equal); F_sf is kept
/// because the visualization command renders it.
pub fn equalize(
    tape: &Tape,
    bind: &mut Binding,
    f_fte: &Var,
    f_fst: &Var,
    params: &EqualizeParams,
    kernel: &SpatialKernel,
) -> Result<(Var, Var)> {
    contract!(
        f_fte.shape() == f_fst.shape(),
        "branch outputs differ: {} vs {}",
        f_fte.shape(),
        f_fst.shape()
    );
    let cat = tape.concat(1, &[f_fte, f_fst])?;
    let f_sf = params.fuse.forward(tape, bind, &cat)?;
    let ce = params.se.forward(tape, bind, &f_sf)?;
    let f_equal = bpa(tape, bind, &ce, &params.q, kernel, &params.cfg)?;
    Ok((f_sf, f_equal))
}
