//! Brute-force reference implementations.
//!
//! These deliberately share no machinery with the production kernels:
//! plain nested loops, evaluated definition-first. The self-test command
//! and the test suites compare the fast paths against them.

use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::mathfn::abs;
use crate::tensor::{Shape, Tensor};

/// Direct six-loop convolution (cross-correlation, zero padding).
pub fn conv2d_naive(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    contract!(ws.c() == xs.c(), "channel mismatch {} vs {}", ws, xs);
    let k = ws.h();
    let span = dilation * (k - 1) + 1;
    contract!(
        xs.h() + 2 * pad >= span && xs.w() + 2 * pad >= span,
        "kernel does not fit"
    );
    let out_h = (xs.h() + 2 * pad - span) / stride + 1;
    let out_w = (xs.w() + 2 * pad - span) / stride + 1;
    let mut data = Vec::with_capacity(xs.n() * ws.n() * out_h * out_w);
    for n in 0..xs.n() {
        for oc in 0..ws.n() {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                    for ic in 0..xs.c() {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                if iy < 0
                                    || iy >= xs.h() as isize
                                    || ix < 0
                                    || ix >= xs.w() as isize
                                {
                                    continue;
                                }
                                acc += x.at(n, ic, iy as usize, ix as usize)
                                    * weight.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    data.push(acc);
                }
            }
        }
    }
    Tensor::new(Shape::nchw(xs.n(), ws.n(), out_h, out_w), data)
}

/// Per-window partial convolution: masked taps, renormalization by
/// (in-bounds tap count)/Σmask — k²/Σmask away from the borders — and
/// bias only where the window saw any valid pixel. Returns (out, new mask).
pub fn partial_conv_naive(
    x: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor)> {
    let xs = x.shape();
    let ws = weight.shape();
    let k = ws.h();
    let pad = (k - 1) / 2;
    let out_h = (xs.h() + 2 * pad - k) / stride + 1;
    let out_w = (xs.w() + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(xs.n() * ws.n() * out_h * out_w);
    let mut new_mask = Vec::with_capacity(xs.n() * out_h * out_w);
    for n in 0..xs.n() {
        for oc in 0..ws.n() {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0;
                    let mut msum = 0.0;
                    let mut in_bounds = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || iy >= xs.h() as isize || ix < 0 || ix >= xs.w() as isize {
                                continue;
                            }
                            in_bounds += 1;
                            let m = mask.at(n, 0, iy as usize, ix as usize);
                            msum += m;
                            for ic in 0..xs.c() {
                                acc += x.at(n, ic, iy as usize, ix as usize)
                                    * m
                                    * weight.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    if msum > 0.0 {
                        out.push(acc * in_bounds as f64 / msum + bias.data()[oc]);
                    } else {
                        out.push(0.0);
                    }
                    if oc == 0 {
                        new_mask.push(if msum > 0.0 { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(Shape::nchw(xs.n(), ws.n(), out_h, out_w), out)?,
        Tensor::new(Shape::nchw(xs.n(), 1, out_h, out_w), new_mask)?,
    ))
}

/// Direct per-window SSIM (uniform window, valid positions only).
pub fn ssim_naive(a: &Tensor, b: &Tensor, win: usize) -> Result<f64> {
    contract!(a.shape() == b.shape(), "shape mismatch");
    let s = a.shape();
    contract!(s.h() >= win && s.w() >= win, "image smaller than window");
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let area = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n() {
        for c in 0..s.c() {
            for y0 in 0..=(s.h() - win) {
                for x0 in 0..=(s.w() - win) {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            ma += a.at(n, c, y, x);
                            mb += b.at(n, c, y, x);
                        }
                    }
                    ma /= area;
                    mb /= area;
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for y in y0..y0 + win {
                        for x in x0..x0 + win {
                            let da = a.at(n, c, y, x) - ma;
                            let db = b.at(n, c, y, x) - mb;
                            va += da * da;
                            vb += db * db;
                            cov += da * db;
                        }
                    }
                    va /= area;
                    vb /= area;
                    cov /= area;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Max |a−b| between two tensors, as a free function for report printing.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    contract!(a.shape() == b.shape(), "shape mismatch");
    let mut m = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        m = m.max(abs(x - y));
    }
    Ok(m)
}
