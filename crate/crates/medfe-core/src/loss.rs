//! Training objectives: branch/pixel reconstruction, perceptual and style
//! losses over a frozen feature extractor, the relativistic-average
//! adversarial pair, and their weighted total.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Tradeoff parameters of the total objective.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_adv: f64,
    pub lambda_st: f64,
    pub lambda_te: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_p: 0.1,
            lambda_s: 250.0,
            lambda_adv: 0.2,
            lambda_st: 1.0,
            lambda_te: 1.0,
        }
    }
}

/// Floor under every log argument in the adversarial losses.
pub const LOG_FLOOR: f64 = 1e-8;

// ---- frozen feature extractor ---------------------------------------------------

pub const EXTRACTOR_CHANNELS: [usize; 5] = [16, 32, 64, 128, 128];

/// Frozen five-layer feature pyramid producing activation maps Φ₁..Φ₅ at
/// halving resolutions. The default backend derives its weights from a
/// named seed (orthonormalized Gaussian rows); a loader accepts real
/// pretrained weights from the checkpoint container instead.
pub struct FeatureExtractor {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

fn orthonormal_rows(rng: &mut SeedRng, rows: usize, cols: usize, gain: f64) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.normal()).collect())
        .collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(m[j].iter()).map(|(a, b)| a * b).sum();
            for k in 0..cols {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = crate::mathfn::sqrt(m[i].iter().map(|v| v * v).sum());
        for k in 0..cols {
            m[i][k] /= norm;
        }
    }
    m.into_iter().flatten().map(|v| v * gain).collect()
}

impl FeatureExtractor {
    /// Deterministic seeded backend.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = SeedRng::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut in_c = 3;
        for &out_c in &EXTRACTOR_CHANNELS {
            let cols = in_c * 9;
            let data = orthonormal_rows(&mut rng, out_c, cols, crate::mathfn::sqrt(2.0));
            weights.push(
                Tensor::new(Shape::nchw(out_c, in_c, 3, 3), data).expect("extractor weight"),
            );
            biases.push(Tensor::zeros(Shape::nchw(1, out_c, 1, 1)));
            in_c = out_c;
        }
        FeatureExtractor { weights, biases }
    }

    /// Loads weights named `fx.conv{i}.weight` / `fx.conv{i}.bias` from a
    /// decoded checkpoint container.
    pub fn from_entries(entries: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..EXTRACTOR_CHANNELS.len() {
            let w = entries
                .get(&format!("fx.conv{i}.weight"))
                .ok_or_else(|| Error::Format(format!("missing fx.conv{i}.weight")))?;
            let b = entries
                .get(&format!("fx.conv{i}.bias"))
                .ok_or_else(|| Error::Format(format!("missing fx.conv{i}.bias")))?;
            weights.push(w.clone());
            biases.push(b.clone());
        }
        Ok(FeatureExtractor { weights, biases })
    }

    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            out.push((format!("fx.conv{i}.weight"), w.clone()));
            out.push((format!("fx.conv{i}.bias"), b.clone()));
        }
        out
    }

    /// The five post-ReLU activation maps. Weights enter the tape as
    /// constants, so gradients flow into the image but never the extractor.
    pub fn forward(&self, tape: &Tape, img: &Var) -> Result<Vec<Var>> {
        let mut maps = Vec::with_capacity(self.weights.len());
        let mut h = img.clone();
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            let wv = tape.constant(w.clone());
            let bv = tape.constant(b.clone());
            let conv = tape.conv2d(&h, &wv, Some(&bv), 2, 1, 1)?;
            h = tape.relu(&conv);
            maps.push(h.clone());
        }
        Ok(maps)
    }
}

// ---- pixel losses ------------------------------------------------------------------

/// Mean absolute difference.
pub fn l1_mean(tape: &Tape, a: &Var, b: &Var) -> Result<Var> {
    contract!(
        a.shape() == b.shape(),
        "l1 of {} against {}",
        a.shape(),
        b.shape()
    );
    let d = tape.sub(a, b)?;
    let d = tape.abs(&d);
    tape.mean_all(&d)
}

/// L_re: mean |I_out − I_gt|.
pub fn recon_loss(tape: &Tape, i_out: &Var, i_gt: &Var) -> Result<Var> {
    l1_mean(tape, i_out, i_gt)
}

/// (L_rst, L_rte): branch supervisions against the structure image and
/// the ground truth, both already at the branch output resolution.
pub fn branch_recon_loss(
    tape: &Tape,
    i_ost: &Var,
    i_ote: &Var,
    i_st_small: &Var,
    i_gt_small: &Var,
) -> Result<(Var, Var)> {
    let l_rst = l1_mean(tape, i_ost, i_st_small)?;
    let l_rte = l1_mean(tape, i_ote, i_gt_small)?;
    Ok((l_rst, l_rte))
}

// ---- feature losses -----------------------------------------------------------------

/// Σ_i (1/N_i)·‖Φ_i(a) − Φ_i(b)‖₁ over the extractor's five maps.
pub fn perceptual_loss(tape: &Tape, fx: &FeatureExtractor, a: &Var, b: &Var) -> Result<Var> {
    let fa = fx.forward(tape, a)?;
    let fb = fx.forward(tape, b)?;
    let mut total: Option<Var> = None;
    for (pa, pb) in fa.iter().zip(fb.iter()) {
        let term = l1_mean(tape, pa, pb)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(&acc, &term)?,
        });
    }
    Ok(total.expect("extractor has layers"))
}

/// G = A·Aᵀ / (c·h·w) per sample, with A the c×(h·w) unfolding.
/// Output shape (n, 1, c, c).
pub fn gram_matrix(tape: &Tape, phi: &Var) -> Result<Var> {
    let s = phi.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let a = tape.reshape(phi, Shape([n, 1, c, h * w]))?;
    let at = tape.permute(&a, [0, 1, 3, 2])?;
    let g = tape.matmul(&a, &at)?;
    Ok(tape.scale(&g, 1.0 / (c * h * w) as f64))
}

/// Mean over layers of the entrywise mean |ΔG| between the two Gram
/// matrices. The mean over the c×c entries is what the weight λ_s = 250
/// is calibrated against; an entrywise sum would let the style term
/// swamp every other objective.
pub fn style_loss(tape: &Tape, fx: &FeatureExtractor, a: &Var, b: &Var) -> Result<Var> {
    let fa = fx.forward(tape, a)?;
    let fb = fx.forward(tape, b)?;
    let mut total: Option<Var> = None;
    for (pa, pb) in fa.iter().zip(fb.iter()) {
        let ga = gram_matrix(tape, pa)?;
        let gb = gram_matrix(tape, pb)?;
        let d = tape.sub(&ga, &gb)?;
        let d = tape.abs(&d);
        let term = tape.mean_all(&d)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(&acc, &term)?,
        });
    }
    Ok(tape.scale(&total.expect("extractor has layers"), 1.0 / fa.len() as f64))
}

// ---- adversarial losses ----------------------------------------------------------------

/// Relativistic-average adversarial pair from pre-sigmoid score maps.
///
/// D_ra(x, y) = sigmoid(C(x) − E[C(y)]), expectations over batch and
/// patch positions, logs clamped at 1e−8. Returns (L_G, L_D).
pub fn adv_losses(tape: &Tape, real_scores: &Var, fake_scores: &Var) -> Result<(Var, Var)> {
    let mean_fake = tape.mean_all(fake_scores)?;
    let mean_real = tape.mean_all(real_scores)?;
    let d_rf = tape.sigmoid(&tape.sub(real_scores, &mean_fake)?);
    let d_fr = tape.sigmoid(&tape.sub(fake_scores, &mean_real)?);

    let log_term = |v: &Var| -> Result<Var> {
        let clamped = tape.clamp_min(v, LOG_FLOOR);
        let l = tape.ln(&clamped);
        tape.mean_all(&l)
    };

    let one_minus_rf = tape.one_minus(&d_rf);
    let one_minus_fr = tape.one_minus(&d_fr);

    let l_g = tape.add(
        &tape.neg(&log_term(&one_minus_rf)?),
        &tape.neg(&log_term(&d_fr)?),
    )?;
    let l_d = tape.add(
        &tape.neg(&log_term(&d_rf)?),
        &tape.neg(&log_term(&one_minus_fr)?),
    )?;
    Ok((l_g, l_d))
}

// ---- total ------------------------------------------------------------------------------

pub struct LossParts {
    pub l_re: Var,
    pub l_prec: Var,
    pub l_style: Var,
    pub l_adv: Var,
    pub l_rst: Var,
    pub l_rte: Var,
}

/// λ_r·L_re + λ_p·L_prec + λ_s·L_style + λ_adv·L_adv + λ_st·L_rst + λ_te·L_rte.
///
/// Accumulation order is fixed (r, p, adv, s, st, te): addition order
/// changes the f64 result, and this order reproduces the documented
/// unit-parts total of 253.3 exactly.
pub fn total_loss(tape: &Tape, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    let mut acc = tape.scale(&parts.l_re, w.lambda_r);
    acc = tape.add(&acc, &tape.scale(&parts.l_prec, w.lambda_p))?;
    acc = tape.add(&acc, &tape.scale(&parts.l_adv, w.lambda_adv))?;
    acc = tape.add(&acc, &tape.scale(&parts.l_style, w.lambda_s))?;
    acc = tape.add(&acc, &tape.scale(&parts.l_rst, w.lambda_st))?;
    acc = tape.add(&acc, &tape.scale(&parts.l_rte, w.lambda_te))?;
    Ok(acc)
}
