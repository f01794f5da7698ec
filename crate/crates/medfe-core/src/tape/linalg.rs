//! f64 GEMM kernels and the batched matmul op.
//!
//! Loop orders are fixed so reductions are bitwise-deterministic. The
//! `ikj` kernel keeps the inner loop contiguous over both operands, which
//! is what the autovectorizer needs; these three routines carry nearly
//! all the arithmetic of the convolution layers.

use alloc::vec;

use crate::error::{contract, Result};
use crate::tensor::{Shape, Tensor};

/// c[m×p] += a[m×k] · b[k×p], all row-major.
pub(crate) fn gemm_nn(m: usize, k: usize, p: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * p && c.len() >= m * p);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * p..(i + 1) * p];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * p..(kk + 1) * p];
            for j in 0..p {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c[m×k] += a[m×p] · b[k×p]ᵀ (row dots), all row-major.
pub(crate) fn gemm_nt(m: usize, p: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * p && b.len() >= k * p && c.len() >= m * k);
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        let crow = &mut c[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * p..(kk + 1) * p];
            // Four fixed-order partial sums; combined in a fixed order.
            let mut s = [0.0f64; 4];
            let chunks = p / 4;
            for ch in 0..chunks {
                let o = ch * 4;
                s[0] += arow[o] * brow[o];
                s[1] += arow[o + 1] * brow[o + 1];
                s[2] += arow[o + 2] * brow[o + 2];
                s[3] += arow[o + 3] * brow[o + 3];
            }
            let mut tail = 0.0f64;
            for j in chunks * 4..p {
                tail += arow[j] * brow[j];
            }
            crow[kk] += ((s[0] + s[1]) + (s[2] + s[3])) + tail;
        }
    }
}

/// c[k×p] += a[m×k]ᵀ · b[m×p], all row-major.
pub(crate) fn gemm_tn(m: usize, k: usize, p: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= m * p && c.len() >= k * p);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * p..(i + 1) * p];
        for (kk, &av) in arow.iter().enumerate() {
            let crow = &mut c[kk * p..(kk + 1) * p];
            for j in 0..p {
                crow[j] += av * brow[j];
            }
        }
    }
}

fn batch_dims(a: Shape, b: Shape) -> Result<(usize, usize)> {
    let d0 = match (a.0[0], b.0[0]) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => {
            return Err(crate::error::Error::Contract(alloc::format!(
                "matmul batch dims of {} and {} do not broadcast",
                a,
                b
            )))
        }
    };
    let d1 = match (a.0[1], b.0[1]) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        _ => {
            return Err(crate::error::Error::Contract(alloc::format!(
                "matmul batch dims of {} and {} do not broadcast",
                a,
                b
            )))
        }
    };
    Ok((d0, d1))
}

pub(crate) fn matmul_apply(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    let (m, ka) = (sa.h(), sa.w());
    let (kb, p) = (sb.h(), sb.w());
    contract!(
        ka == kb,
        "matmul inner dims disagree: {} vs {}",
        sa,
        sb
    );
    let (d0, d1) = batch_dims(sa, sb)?;
    let out_shape = Shape([d0, d1, m, p]);
    let mut data = vec![0.0f64; out_shape.count()];
    let ad = a.data();
    let bd = b.data();
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            let ab = block_off(sa, i0, i1);
            let bb = block_off(sb, i0, i1);
            let ob = (i0 * d1 + i1) * m * p;
            gemm_nn(
                m,
                ka,
                p,
                &ad[ab..ab + m * ka],
                &bd[bb..bb + kb * p],
                &mut data[ob..ob + m * p],
            );
        }
    }
    Tensor::new(out_shape, data)
}

fn block_off(s: Shape, i0: usize, i1: usize) -> usize {
    let j0 = if s.0[0] == 1 { 0 } else { i0 };
    let j1 = if s.0[1] == 1 { 0 } else { i1 };
    (j0 * s.0[1] + j1) * s.0[2] * s.0[3]
}

pub(crate) fn matmul_grad(g: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (sa, sb, sg) = (a.shape(), b.shape(), g.shape());
    let (m, k) = (sa.h(), sa.w());
    let p = sb.w();
    let (d0, d1) = (sg.0[0], sg.0[1]);
    let mut da = vec![0.0f64; sa.count()];
    let mut db = vec![0.0f64; sb.count()];
    let ad = a.data();
    let bd = b.data();
    let gd = g.data();
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            let ab = block_off(sa, i0, i1);
            let bb = block_off(sb, i0, i1);
            let gb = (i0 * d1 + i1) * m * p;
            let gblk = &gd[gb..gb + m * p];
            // dA += g · bᵀ ; accumulates across the batch when a broadcast.
            gemm_nt(m, p, k, gblk, &bd[bb..bb + k * p], &mut da[ab..ab + m * k]);
            // dB += aᵀ · g
            gemm_tn(m, k, p, &ad[ab..ab + m * k], gblk, &mut db[bb..bb + k * p]);
        }
    }
    Ok((Tensor::new(sa, da)?, Tensor::new(sb, db)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_nn_matches_triple_loop() {
        let (m, k, p) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.71).sin()).collect();
        let b: Vec<f64> = (0..k * p).map(|i| (i as f64 * 0.37).cos()).collect();
        let mut c = vec![0.0; m * p];
        gemm_nn(m, k, p, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a[i * k + kk] * b[kk * p + j];
                }
                assert!((c[i * p + j] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transposed_kernels_agree_with_gemm_nn() {
        let (m, k, p) = (4, 6, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 1.3).sin()).collect();
        let b: Vec<f64> = (0..k * p).map(|i| (i as f64 * 0.9).cos()).collect();
        let mut c_ref = vec![0.0; m * p];
        gemm_nn(m, k, p, &a, &b, &mut c_ref);

        // a · b == a · (bᵀ)ᵀ via gemm_nt
        let mut bt = vec![0.0; k * p];
        for i in 0..k {
            for j in 0..p {
                bt[j * k + i] = b[i * p + j];
            }
        }
        let mut c1 = vec![0.0; m * p];
        gemm_nt(m, k, p, &a, &bt, &mut c1);
        for (x, y) in c_ref.iter().zip(c1.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }

        // a · b == (aᵀ)ᵀ · b via gemm_tn
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c2 = vec![0.0; m * p];
        gemm_tn(k, m, p, &at, &b, &mut c2);
        for (x, y) in c_ref.iter().zip(c2.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
