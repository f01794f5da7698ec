//! Nearest and bilinear spatial resizing.
//!
//! Bilinear uses the align-corners-false convention: source coordinate
//! = (dst + 0.5)·(in/out) − 0.5, clamped. Nearest takes floor(dst·in/out),
//! which is exact subsampling/replication for integer ratios.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// One output row/col maps to up to two source taps with weights.
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            if src <= 0.0 {
                Tap { i0: 0, i1: 0, w1: 0.0 }
            } else {
                let f = crate::mathfn::floor(src);
                let i0 = f as usize;
                if i0 + 1 >= in_len {
                    Tap {
                        i0: in_len - 1,
                        i1: in_len - 1,
                        w1: 0.0,
                    }
                } else {
                    Tap {
                        i0,
                        i1: i0 + 1,
                        w1: src - f,
                    }
                }
            }
        })
        .collect()
}

pub(crate) fn resize_apply(x: &Tensor, mode: ResizeMode, target: (usize, usize)) -> Tensor {
    let s = x.shape();
    let (th, tw) = target;
    if (s.h(), s.w()) == target {
        return x.clone();
    }
    let out_shape = Shape::nchw(s.n(), s.c(), th, tw);
    let xd = x.data();
    let plane = s.h() * s.w();
    let mut data = Vec::with_capacity(out_shape.count());
    match mode {
        ResizeMode::Nearest => {
            for ni in 0..s.n() {
                for ci in 0..s.c() {
                    let src = &xd[(ni * s.c() + ci) * plane..(ni * s.c() + ci + 1) * plane];
                    for oy in 0..th {
                        let iy = oy * s.h() / th;
                        for ox in 0..tw {
                            let ix = ox * s.w() / tw;
                            data.push(src[iy * s.w() + ix]);
                        }
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let ty = bilinear_taps(th, s.h());
            let tx = bilinear_taps(tw, s.w());
            for ni in 0..s.n() {
                for ci in 0..s.c() {
                    let src = &xd[(ni * s.c() + ci) * plane..(ni * s.c() + ci + 1) * plane];
                    for t_y in &ty {
                        let r0 = &src[t_y.i0 * s.w()..(t_y.i0 + 1) * s.w()];
                        let r1 = &src[t_y.i1 * s.w()..(t_y.i1 + 1) * s.w()];
                        for t_x in &tx {
                            let top = r0[t_x.i0] * (1.0 - t_x.w1) + r0[t_x.i1] * t_x.w1;
                            let bot = r1[t_x.i0] * (1.0 - t_x.w1) + r1[t_x.i1] * t_x.w1;
                            data.push(top * (1.0 - t_y.w1) + bot * t_y.w1);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, data).expect("resize shape")
}

pub(crate) fn resize_grad(g: &Tensor, mode: ResizeMode, in_shape: Shape) -> Tensor {
    let gs = g.shape();
    if (gs.h(), gs.w()) == (in_shape.h(), in_shape.w()) {
        return g.clone();
    }
    let gd = g.data();
    let (th, tw) = (gs.h(), gs.w());
    let plane = in_shape.h() * in_shape.w();
    let mut data = vec![0.0f64; in_shape.count()];
    match mode {
        ResizeMode::Nearest => {
            for ni in 0..in_shape.n() {
                for ci in 0..in_shape.c() {
                    let dst = &mut data
                        [(ni * in_shape.c() + ci) * plane..(ni * in_shape.c() + ci + 1) * plane];
                    let gsrc = &gd[(ni * gs.c() + ci) * th * tw..(ni * gs.c() + ci + 1) * th * tw];
                    for oy in 0..th {
                        let iy = oy * in_shape.h() / th;
                        for ox in 0..tw {
                            let ix = ox * in_shape.w() / tw;
                            dst[iy * in_shape.w() + ix] += gsrc[oy * tw + ox];
                        }
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let ty = bilinear_taps(th, in_shape.h());
            let tx = bilinear_taps(tw, in_shape.w());
            for ni in 0..in_shape.n() {
                for ci in 0..in_shape.c() {
                    let dst = &mut data
                        [(ni * in_shape.c() + ci) * plane..(ni * in_shape.c() + ci + 1) * plane];
                    let gsrc = &gd[(ni * gs.c() + ci) * th * tw..(ni * gs.c() + ci + 1) * th * tw];
                    for (oy, t_y) in ty.iter().enumerate() {
                        for (ox, t_x) in tx.iter().enumerate() {
                            let gv = gsrc[oy * tw + ox];
                            let wy0 = 1.0 - t_y.w1;
                            let wx0 = 1.0 - t_x.w1;
                            dst[t_y.i0 * in_shape.w() + t_x.i0] += gv * wy0 * wx0;
                            dst[t_y.i0 * in_shape.w() + t_x.i1] += gv * wy0 * t_x.w1;
                            dst[t_y.i1 * in_shape.w() + t_x.i0] += gv * t_y.w1 * wx0;
                            dst[t_y.i1 * in_shape.w() + t_x.i1] += gv * t_y.w1 * t_x.w1;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(in_shape, data).expect("resize grad shape")
}

/// Nearest resize of a plain tensor (used for masks outside any tape).
pub(crate) fn resize_nearest_value(x: &Tensor, target: (usize, usize)) -> Tensor {
    resize_apply(x, ResizeMode::Nearest, target)
}
