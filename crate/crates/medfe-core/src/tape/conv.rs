//! Convolution forward/backward via im2col + GEMM.
//!
//! The column buffer is rebuilt in the backward pass instead of saved;
//! at the feature sizes this crate trains at, recompute is far cheaper
//! than holding one column matrix per layer per sample.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{contract, Result};
use crate::tensor::{Shape, Tensor};

/// Window geometry shared by im2col/col2im: `img` is the large side the
/// windows read from (or scatter into), `pos` is the window grid.
#[derive(Clone, Copy, Debug)]
struct WinGeom {
    channels: usize,
    img_h: usize,
    img_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    pos_h: usize,
    pos_w: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn infer(x: Shape, weight: Shape, stride: usize, pad: usize, dilation: usize) -> Result<Self> {
        contract!(stride >= 1, "conv stride must be positive");
        contract!(dilation >= 1, "conv dilation must be positive");
        let k = weight.h();
        contract!(k >= 1 && weight.w() == k, "conv kernel must be square, got {}", weight);
        contract!(
            weight.c() == x.c(),
            "conv weight {} does not match input {}",
            weight,
            x
        );
        let span = dilation * (k - 1) + 1;
        contract!(
            x.h() + 2 * pad >= span && x.w() + 2 * pad >= span,
            "conv kernel span {} exceeds padded input {}",
            span,
            x
        );
        let out_h = (x.h() + 2 * pad - span) / stride + 1;
        let out_w = (x.w() + 2 * pad - span) / stride + 1;
        Ok(ConvGeom {
            n: x.n(),
            in_c: x.c(),
            h: x.h(),
            w: x.w(),
            out_c: weight.n(),
            k,
            stride,
            pad,
            dilation,
            out_h,
            out_w,
        })
    }

    fn win(&self) -> WinGeom {
        WinGeom {
            channels: self.in_c,
            img_h: self.h,
            img_w: self.w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            dilation: self.dilation,
            pos_h: self.out_h,
            pos_w: self.out_w,
        }
    }

    fn out_shape(&self) -> Shape {
        Shape::nchw(self.n, self.out_c, self.out_h, self.out_w)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvTGeom {
    pub n: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvTGeom {
    pub fn infer(x: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        contract!(stride >= 1, "conv_transpose stride must be positive");
        let k = weight.h();
        contract!(
            k >= 1 && weight.w() == k,
            "conv_transpose kernel must be square, got {}",
            weight
        );
        contract!(
            weight.n() == x.c(),
            "conv_transpose weight {} does not match input {}",
            weight,
            x
        );
        let out_h = (x.h() - 1) * stride + k;
        let out_w = (x.w() - 1) * stride + k;
        contract!(
            out_h > 2 * pad && out_w > 2 * pad,
            "conv_transpose padding {} swallows the whole output",
            pad
        );
        Ok(ConvTGeom {
            n: x.n(),
            in_c: x.c(),
            h: x.h(),
            w: x.w(),
            out_c: weight.c(),
            k,
            stride,
            pad,
            out_h: out_h - 2 * pad,
            out_w: out_w - 2 * pad,
        })
    }

    /// Geometry of the ordinary convolution this op is the adjoint of:
    /// windows over the (out_h, out_w) image at the input's grid.
    fn win(&self) -> WinGeom {
        WinGeom {
            channels: self.out_c,
            img_h: self.out_h,
            img_w: self.out_w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            dilation: 1,
            pos_h: self.h,
            pos_w: self.w,
        }
    }

    fn out_shape(&self) -> Shape {
        Shape::nchw(self.n, self.out_c, self.out_h, self.out_w)
    }
}

/// Writes the (channels·k·k) × (pos_h·pos_w) column matrix for one sample.
/// `cols` must be zeroed by the caller; only in-bounds taps are written.
fn im2col(g: WinGeom, img: &[f64], cols: &mut [f64]) {
    let p_total = g.pos_h * g.pos_w;
    let plane = g.img_h * g.img_w;
    for ci in 0..g.channels {
        let src_plane = &img[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * p_total;
                let off_x = kx * g.dilation;
                for py in 0..g.pos_h {
                    let iy = (py * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.img_h as isize {
                        continue;
                    }
                    let src_row = &src_plane[iy as usize * g.img_w..(iy as usize + 1) * g.img_w];
                    let dst = &mut cols[row + py * g.pos_w..row + (py + 1) * g.pos_w];
                    // ix = px·stride + off_x − pad must lie in [0, img_w)
                    let lo = if g.pad > off_x {
                        (g.pad - off_x).div_ceil(g.stride)
                    } else {
                        0
                    };
                    let hi_num = g.img_w + g.pad;
                    if hi_num <= off_x {
                        continue;
                    }
                    let hi = ((hi_num - off_x - 1) / g.stride + 1).min(g.pos_w);
                    if lo >= hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let ix0 = lo + off_x - g.pad;
                        dst[lo..hi].copy_from_slice(&src_row[ix0..ix0 + (hi - lo)]);
                    } else {
                        for px in lo..hi {
                            dst[px] = src_row[px * g.stride + off_x - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into the sample image.
fn col2im_add(g: WinGeom, cols: &[f64], img: &mut [f64]) {
    let p_total = g.pos_h * g.pos_w;
    let plane = g.img_h * g.img_w;
    for ci in 0..g.channels {
        let dst_plane = &mut img[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * p_total;
                let off_x = kx * g.dilation;
                for py in 0..g.pos_h {
                    let iy = (py * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.img_h as isize {
                        continue;
                    }
                    let dst_row =
                        &mut dst_plane[iy as usize * g.img_w..(iy as usize + 1) * g.img_w];
                    let src = &cols[row + py * g.pos_w..row + (py + 1) * g.pos_w];
                    let lo = if g.pad > off_x {
                        (g.pad - off_x).div_ceil(g.stride)
                    } else {
                        0
                    };
                    let hi_num = g.img_w + g.pad;
                    if hi_num <= off_x {
                        continue;
                    }
                    let hi = ((hi_num - off_x - 1) / g.stride + 1).min(g.pos_w);
                    if lo >= hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let ix0 = lo + off_x - g.pad;
                        for (d, s) in dst_row[ix0..ix0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for px in lo..hi {
                            dst_row[px * g.stride + off_x - g.pad] += src[px];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_apply(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, g: ConvGeom) -> Tensor {
    let win = g.win();
    let ickk = g.in_c * g.k * g.k;
    let p_total = g.out_h * g.out_w;
    let in_plane = g.in_c * g.h * g.w;
    let out_plane = g.out_c * p_total;
    let mut out = vec![0.0f64; g.n * out_plane];
    let mut cols = vec![0.0f64; ickk * p_total];
    let xd = x.data();
    let wd = weight.data();
    for ni in 0..g.n {
        cols.fill(0.0);
        im2col(win, &xd[ni * in_plane..(ni + 1) * in_plane], &mut cols);
        gemm_nn(
            g.out_c,
            ickk,
            p_total,
            wd,
            &cols,
            &mut out[ni * out_plane..(ni + 1) * out_plane],
        );
    }
    if let Some(b) = bias {
        let bd = b.data();
        for ni in 0..g.n {
            for oc in 0..g.out_c {
                let bv = bd[oc];
                for v in &mut out[ni * out_plane + oc * p_total..ni * out_plane + (oc + 1) * p_total]
                {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(g.out_shape(), out).expect("conv2d shape")
}

/// Gradients w.r.t. [input, weight, bias]; the caller drops the bias slot
/// when the op had none.
pub(crate) fn conv2d_grad(
    g: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    geom: ConvGeom,
) -> Vec<Option<Tensor>> {
    let win = geom.win();
    let ickk = geom.in_c * geom.k * geom.k;
    let p_total = geom.out_h * geom.out_w;
    let in_plane = geom.in_c * geom.h * geom.w;
    let out_plane = geom.out_c * p_total;
    let gd = g.data();
    let xd = input.data();
    let wd = weight.data();

    let mut dx = vec![0.0f64; input.count()];
    let mut dw = vec![0.0f64; weight.count()];
    let mut dbias = vec![0.0f64; geom.out_c];
    let mut cols = vec![0.0f64; ickk * p_total];
    let mut dcols = vec![0.0f64; ickk * p_total];

    for ni in 0..geom.n {
        let gblk = &gd[ni * out_plane..(ni + 1) * out_plane];
        // weight gradient: dW += g · colsᵀ
        cols.fill(0.0);
        im2col(win, &xd[ni * in_plane..(ni + 1) * in_plane], &mut cols);
        gemm_nt(geom.out_c, p_total, ickk, gblk, &cols, &mut dw);
        // input gradient: cols-grad = Wᵀ · g, scattered back
        dcols.fill(0.0);
        gemm_tn(geom.out_c, ickk, p_total, wd, gblk, &mut dcols);
        col2im_add(win, &dcols, &mut dx[ni * in_plane..(ni + 1) * in_plane]);
        for oc in 0..geom.out_c {
            let mut s = 0.0;
            for v in &gblk[oc * p_total..(oc + 1) * p_total] {
                s += v;
            }
            dbias[oc] += s;
        }
    }

    vec![
        Some(Tensor::new(input.shape(), dx).expect("conv2d dx")),
        Some(Tensor::new(weight.shape(), dw).expect("conv2d dw")),
        Some(Tensor::new(Shape::nchw(1, geom.out_c, 1, 1), dbias).expect("conv2d dbias")),
    ]
}

pub(crate) fn conv_t2d_apply(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    g: ConvTGeom,
) -> Tensor {
    let win = g.win();
    let ockk = g.out_c * g.k * g.k;
    let p_total = g.h * g.w;
    let in_plane = g.in_c * p_total;
    let out_plane = g.out_c * g.out_h * g.out_w;
    let mut out = vec![0.0f64; g.n * out_plane];
    let mut dcols = vec![0.0f64; ockk * p_total];
    let xd = x.data();
    let wd = weight.data(); // (in_c, out_c·k·k) as a matrix
    for ni in 0..g.n {
        dcols.fill(0.0);
        gemm_tn(
            g.in_c,
            ockk,
            p_total,
            wd,
            &xd[ni * in_plane..(ni + 1) * in_plane],
            &mut dcols,
        );
        col2im_add(win, &dcols, &mut out[ni * out_plane..(ni + 1) * out_plane]);
    }
    if let Some(b) = bias {
        let bd = b.data();
        let spatial = g.out_h * g.out_w;
        for ni in 0..g.n {
            for oc in 0..g.out_c {
                let bv = bd[oc];
                for v in &mut out[ni * out_plane + oc * spatial..ni * out_plane + (oc + 1) * spatial]
                {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(g.out_shape(), out).expect("conv_transpose2d shape")
}

pub(crate) fn conv_t2d_grad(
    g: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    geom: ConvTGeom,
) -> Vec<Option<Tensor>> {
    let win = geom.win();
    let ockk = geom.out_c * geom.k * geom.k;
    let p_total = geom.h * geom.w;
    let in_plane = geom.in_c * p_total;
    let out_plane = geom.out_c * geom.out_h * geom.out_w;
    let gd = g.data();
    let xd = input.data();
    let wd = weight.data();

    let mut dx = vec![0.0f64; input.count()];
    let mut dw = vec![0.0f64; weight.count()];
    let mut dbias = vec![0.0f64; geom.out_c];
    let mut cols = vec![0.0f64; ockk * p_total];

    for ni in 0..geom.n {
        let gblk = &gd[ni * out_plane..(ni + 1) * out_plane];
        cols.fill(0.0);
        im2col(win, gblk, &mut cols);
        // dInput = W · cols(g)
        gemm_nn(
            geom.in_c,
            ockk,
            p_total,
            wd,
            &cols,
            &mut dx[ni * in_plane..(ni + 1) * in_plane],
        );
        // dW += x · cols(g)ᵀ
        gemm_nt(
            geom.in_c,
            p_total,
            ockk,
            &xd[ni * in_plane..(ni + 1) * in_plane],
            &cols,
            &mut dw,
        );
        let spatial = geom.out_h * geom.out_w;
        for oc in 0..geom.out_c {
            let mut s = 0.0;
            for v in &gblk[oc * spatial..(oc + 1) * spatial] {
                s += v;
            }
            dbias[oc] += s;
        }
    }

    vec![
        Some(Tensor::new(input.shape(), dx).expect("conv_t2d dx")),
        Some(Tensor::new(weight.shape(), dw).expect("conv_t2d dw")),
        Some(Tensor::new(Shape::nchw(1, geom.out_c, 1, 1), dbias).expect("conv_t2d dbias")),
    ]
}

// ---- neighborhood unfold -----------------------------------------------------

/// (n, c, h, w) → (n, h·w, k·k, c); zero padding (k−1)/2, stride 1.
pub(crate) fn unfold_apply(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let pad = (k - 1) / 2;
    let plane = h * w;
    let xd = x.data();
    let out_shape = Shape([n, plane, k * k, c]);
    let mut data = vec![0.0f64; out_shape.count()];
    for ni in 0..n {
        let sample = &xd[ni * c * plane..(ni + 1) * c * plane];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                for ky in 0..k {
                    let iy = (py + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (px + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let j = ky * k + kx;
                        let dst = ((ni * plane + p) * k * k + j) * c;
                        let src = iy as usize * w + ix as usize;
                        for ci in 0..c {
                            data[dst + ci] = sample[ci * plane + src];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, data).expect("unfold shape")
}

pub(crate) fn unfold_grad(g: &Tensor, k: usize, in_shape: Shape) -> Tensor {
    let (n, c, h, w) = (in_shape.n(), in_shape.c(), in_shape.h(), in_shape.w());
    let pad = (k - 1) / 2;
    let plane = h * w;
    let gd = g.data();
    let mut data = vec![0.0f64; in_shape.count()];
    for ni in 0..n {
        let sample = &mut data[ni * c * plane..(ni + 1) * c * plane];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                for ky in 0..k {
                    let iy = (py + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (px + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let j = ky * k + kx;
                        let src = ((ni * plane + p) * k * k + j) * c;
                        let dst = iy as usize * w + ix as usize;
                        for ci in 0..c {
                            sample[ci * plane + dst] += gd[src + ci];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(in_shape, data).expect("unfold grad shape")
}

/// Per-window sum of a single-channel map: the Σmask of partial
/// convolution. Plain value computation, not recorded on any tape.
pub(crate) fn window_sum(mask: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let s = mask.shape();
    contract!(s.c() == 1, "window_sum expects a single-channel map, got {}", s);
    let span = k;
    contract!(
        s.h() + 2 * pad >= span && s.w() + 2 * pad >= span,
        "window {} exceeds padded map {}",
        k,
        s
    );
    let out_h = (s.h() + 2 * pad - k) / stride + 1;
    let out_w = (s.w() + 2 * pad - k) / stride + 1;
    let md = mask.data();
    let plane = s.h() * s.w();
    let mut data = Vec::with_capacity(s.n() * out_h * out_w);
    for ni in 0..s.n() {
        let sample = &md[ni * plane..(ni + 1) * plane];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.h() as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= s.w() as isize {
                            continue;
                        }
                        acc += sample[iy as usize * s.w() + ix as usize];
                    }
                }
                data.push(acc);
            }
        }
    }
    Tensor::new(Shape::nchw(s.n(), 1, out_h, out_w), data)
}
