//! One training step: discriminator update on detached fakes, then a
//! generator update against the refreshed discriminators. A fresh tape
//! per phase, single-threaded, fully deterministic per seed.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::layers::Binding;
use crate::loss::{
    adv_losses, branch_recon_loss, perceptual_loss, recon_loss, style_loss, total_loss,
    FeatureExtractor, LossParts, LossWeights,
};
use crate::model::{hole_boxes, local_patches, GeneratorConfig, MEDFEModel};
use crate::optim::Adam;
use crate::rng::SeedRng;
use crate::tape::{Gradients, ResizeMode, Tape};
use crate::tensor::{Shape, Tensor};

/// Seed of the substitute feature-extractor backend. Fixed by name so
/// perceptual/style values are comparable across runs and machines.
pub const EXTRACTOR_SEED: u64 = 0x4d45_4446_4558_5452; // "MEDFEXTR"

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            adam_betas: (0.5, 0.999),
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// A training batch: images and structure images in [−1, 1], binary masks.
pub struct Batch {
    pub image: Tensor,
    pub structure: Tensor,
    pub mask: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub l_re: f64,
    pub l_prec: f64,
    pub l_style: f64,
    pub l_adv: f64,
    pub l_rst: f64,
    pub l_rte: f64,
    pub l_total: f64,
    pub l_d: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        [
            self.l_re,
            self.l_prec,
            self.l_style,
            self.l_adv,
            self.l_rst,
            self.l_rte,
            self.l_total,
            self.l_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub struct Trainer {
    pub model: MEDFEModel,
    pub fx: FeatureExtractor,
    pub weights: LossWeights,
    opt_g: Adam,
    opt_d: Adam,
    pub rng: SeedRng,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: GeneratorConfig, tcfg: TrainConfig) -> Result<Self> {
        let model = MEDFEModel::new(cfg, tcfg.seed)?;
        Ok(Trainer {
            model,
            fx: FeatureExtractor::seeded(EXTRACTOR_SEED),
            weights: tcfg.weights,
            opt_g: Adam::new(tcfg.learning_rate, tcfg.adam_betas),
            opt_d: Adam::new(tcfg.learning_rate, tcfg.adam_betas),
            rng: SeedRng::new(tcfg.seed.wrapping_add(1)),
            step: 0,
        })
    }

    /// Batch indices for the next step, drawn from the trainer's stream.
    pub fn sample_indices(&mut self, total: usize, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| self.rng.usize_below(total)).collect()
    }

    fn apply(opt: &mut Adam, model: &mut MEDFEModel, bind_pairs: &[(String, crate::tape::NodeId)], grads: &Gradients) {
        let mut by_name: BTreeMap<&str, &Tensor> = BTreeMap::new();
        for (name, id) in bind_pairs {
            if let Some(g) = grads.by_id(*id) {
                by_name.insert(name.as_str(), g);
            }
        }
        opt.begin_step();
        model.visit_params_mut(&mut |name, param| {
            if let Some(g) = by_name.get(name) {
                opt.update(name, param, g);
            }
        });
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLosses> {
        let s = batch.image.shape();
        contract!(
            batch.structure.shape() == s,
            "structure shape {} vs image {}",
            batch.structure.shape(),
            s
        );
        let boxes = hole_boxes(&batch.mask)?;

        // Generator forward, recorded for the later generator update.
        let tape_g = Tape::new();
        let mut bind_g = Binding::new(&tape_g, true);
        let image_g = tape_g.constant(batch.image.clone());
        let gen = self
            .model
            .gen
            .forward(&tape_g, &mut bind_g, &image_g, &batch.mask)?;

        // One spectral-norm power iteration per step, before any use.
        self.model.disc_global.update_spectral_state();
        self.model.disc_local.update_spectral_state();

        // -- discriminator update on detached fakes --
        let l_d = {
            let tape = Tape::new();
            let mut bind_d = Binding::new(&tape, true);
            let real = tape.constant(batch.image.clone());
            let fake = tape.constant(gen.i_out.value().clone());
            let sr_g = self.model.disc_global.forward(&tape, &mut bind_d, &real)?;
            let sf_g = self.model.disc_global.forward(&tape, &mut bind_d, &fake)?;
            let (_, ld_g) = adv_losses(&tape, &sr_g, &sf_g)?;
            let real_p = local_patches(&tape, &real, &boxes)?;
            let fake_p = local_patches(&tape, &fake, &boxes)?;
            let sr_l = self.model.disc_local.forward(&tape, &mut bind_d, &real_p)?;
            let sf_l = self.model.disc_local.forward(&tape, &mut bind_d, &fake_p)?;
            let (_, ld_l) = adv_losses(&tape, &sr_l, &sf_l)?;
            let l_d = tape.scale(&tape.add(&ld_g, &ld_l)?, 0.5);
            let value = l_d.value().item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite("discriminator loss".to_string()));
            }
            let grads = tape.backward(&l_d)?;
            Self::apply(&mut self.opt_d, &mut self.model, bind_d.pairs(), &grads);
            value
        };

        // -- generator update against the refreshed discriminators --
        let mut bind_frozen = Binding::new(&tape_g, false);
        let sr_g = self
            .model
            .disc_global
            .forward(&tape_g, &mut bind_frozen, &image_g)?;
        let sf_g = self
            .model
            .disc_global
            .forward(&tape_g, &mut bind_frozen, &gen.i_out)?;
        let (lg_g, _) = adv_losses(&tape_g, &sr_g, &sf_g)?;
        let real_p = local_patches(&tape_g, &image_g, &boxes)?;
        let fake_p = local_patches(&tape_g, &gen.i_out, &boxes)?;
        let sr_l = self
            .model
            .disc_local
            .forward(&tape_g, &mut bind_frozen, &real_p)?;
        let sf_l = self
            .model
            .disc_local
            .forward(&tape_g, &mut bind_frozen, &fake_p)?;
        let (lg_l, _) = adv_losses(&tape_g, &sr_l, &sf_l)?;
        let l_adv = tape_g.scale(&tape_g.add(&lg_g, &lg_l)?, 0.5);

        let l_re = recon_loss(&tape_g, &gen.i_out, &image_g)?;
        let l_prec = perceptual_loss(&tape_g, &self.fx, &gen.i_out, &image_g)?;
        let l_style = style_loss(&tape_g, &self.fx, &gen.i_out, &image_g)?;

        let gt_small = crate::tape::resize::resize_apply(
            &batch.image,
            ResizeMode::Bilinear,
            gen.reorg_size,
        );
        let st_small = crate::tape::resize::resize_apply(
            &batch.structure,
            ResizeMode::Bilinear,
            gen.reorg_size,
        );
        let (l_rst, l_rte) = branch_recon_loss(
            &tape_g,
            &gen.i_ost,
            &gen.i_ote,
            &tape_g.constant(st_small),
            &tape_g.constant(gt_small),
        )?;

        let parts = LossParts {
            l_re: l_re.clone(),
            l_prec: l_prec.clone(),
            l_style: l_style.clone(),
            l_adv: l_adv.clone(),
            l_rst: l_rst.clone(),
            l_rte: l_rte.clone(),
        };
        let l_total = total_loss(&tape_g, &parts, &self.weights)?;

        let losses = StepLosses {
            l_re: l_re.value().item()?,
            l_prec: l_prec.value().item()?,
            l_style: l_style.value().item()?,
            l_adv: l_adv.value().item()?,
            l_rst: l_rst.value().item()?,
            l_rte: l_rte.value().item()?,
            l_total: l_total.value().item()?,
            l_d,
        };
        if !losses.is_finite() {
            return Err(Error::NonFinite("generator loss".to_string()));
        }

        let grads = tape_g.backward(&l_total)?;
        Self::apply(&mut self.opt_g, &mut self.model, bind_g.pairs(), &grads);

        self.step += 1;
        Ok(losses)
    }

    /// Full training state for bit-exact resume: architecture, parameters,
    /// spectral-norm vectors, optimizer moments, RNG position, and the
    /// step counter.
    pub fn state_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = self.model.cfg.entries();
        out.extend(self.model.param_entries());
        out.extend(self.model.disc_global.state_entries());
        out.extend(self.model.disc_local.state_entries());
        out.extend(self.opt_g.state_entries("opt.g"));
        out.extend(self.opt_d.state_entries("opt.d"));
        out.push(("train.step".to_string(), Tensor::scalar(self.step as f64)));
        let (seed, pos) = self.rng.state();
        out.push((
            "train.rng.seed".to_string(),
            Tensor::new(
                Shape::nchw(1, 1, 1, 32),
                seed.iter().map(|&b| b as f64).collect(),
            )
            .expect("rng seed shape"),
        ));
        // u128 split into four 32-bit limbs, little-endian.
        let limbs: Vec<f64> = (0..4)
            .map(|i| ((pos >> (32 * i)) & 0xffff_ffff) as f64)
            .collect();
        out.push((
            "train.rng.pos".to_string(),
            Tensor::new(Shape::nchw(1, 1, 1, 4), limbs).expect("rng pos shape"),
        ));
        out
    }

    pub fn load_state(&mut self, entries: &BTreeMap<String, Tensor>) -> Result<()> {
        self.model.load_params(entries)?;
        self.model.disc_global.load_state(entries);
        self.model.disc_local.load_state(entries);
        self.opt_g.load_state("opt.g", entries);
        self.opt_d.load_state("opt.d", entries);
        if let Some(step) = entries.get("train.step") {
            self.step = step.data()[0] as u64;
        }
        if let (Some(seed), Some(pos)) = (
            entries.get("train.rng.seed"),
            entries.get("train.rng.pos"),
        ) {
            contract!(
                seed.count() == 32 && pos.count() == 4,
                "malformed rng state in checkpoint"
            );
            let mut seed_bytes = [0u8; 32];
            for (b, v) in seed_bytes.iter_mut().zip(seed.data()) {
                *b = *v as u8;
            }
            let mut word_pos: u128 = 0;
            for (i, v) in pos.data().iter().enumerate() {
                word_pos |= ((*v as u128) & 0xffff_ffff) << (32 * i);
            }
            self.rng = SeedRng::restore(seed_bytes, word_pos);
        }
        Ok(())
    }
}
