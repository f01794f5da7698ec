//! The mutual encoder-decoder generator and the global/local
//! discriminators.
//!
//! Pipeline: the masked image (plus the mask as a fourth channel) runs
//! through six stride-2 encoder layers and a dilated residual chain.
//! Shallow features (layers 1–3) are reorganized into texture features,
//! deep features (4–6) into structure features, each filled by a
//! three-stream multi-scale partial-convolution branch, fused, channel-
//! equalized, and passed through the bilateral propagation activation.
//! The decoder upsamples back to the input size; the equalized feature
//! is resized, concatenated, and reduced at every decoder level.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::equalize::{default_sigma, equalize, BpaConfig, EqualizeParams, SpatialKernel};
use crate::error::{contract, Result};
use crate::layers::{
    Binding, Conv2dLayer, ConvT2dLayer, PartialConvLayer, ResidualBlock, SpectralNorm,
    LEAKY_SLOPE,
};
use crate::mask::{hole_bbox, HoleBox};
use crate::rng::SeedRng;
use crate::tape::{resize::resize_nearest_value, ResizeMode, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Side of the patch the local discriminator scores.
pub const LOCAL_PATCH: usize = 64;

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub encoder_channels: [usize; 6],
    pub decoder_channels: [usize; 5],
    pub residual_dilations: Vec<usize>,
    pub branch_kernels: [usize; 3],
    pub branch_channels: usize,
    pub disc_channels: [usize; 4],
    /// Encoder level (0-based) whose spatial size the reorganized
    /// features use; 2 reproduces the layer-3 default.
    pub reorg_level: usize,
    pub bpa: BpaConfig,
}

impl GeneratorConfig {
    /// Full-scale preset for 256×256 training.
    pub fn full() -> Self {
        GeneratorConfig {
            encoder_channels: [64, 128, 256, 512, 512, 512],
            decoder_channels: [512, 256, 128, 64, 64],
            residual_dilations: alloc::vec![2, 2, 2, 2],
            branch_kernels: [3, 5, 7],
            branch_channels: 256,
            disc_channels: [64, 128, 256, 512],
            reorg_level: 2,
            bpa: BpaConfig::default(),
        }
    }

    /// Desk-scale preset for 64×64 synthetic training.
    pub fn desk() -> Self {
        GeneratorConfig {
            encoder_channels: [8, 16, 32, 64, 64, 64],
            decoder_channels: [64, 32, 16, 8, 8],
            residual_dilations: alloc::vec![2, 2, 2, 2],
            branch_kernels: [3, 5, 7],
            branch_channels: 24,
            disc_channels: [8, 16, 32, 64],
            reorg_level: 1,
            bpa: BpaConfig::default(),
        }
    }

    /// Minimal widths for finite-difference checking whole pipelines.
    pub fn tiny() -> Self {
        GeneratorConfig {
            encoder_channels: [4, 4, 8, 8, 8, 8],
            decoder_channels: [8, 8, 4, 4, 4],
            residual_dilations: alloc::vec![2, 2],
            branch_kernels: [3, 5, 7],
            branch_channels: 4,
            disc_channels: [4, 4, 8, 8],
            reorg_level: 2,
            bpa: BpaConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(
            !self.residual_dilations.is_empty(),
            "at least one residual block"
        );
        for &k in &self.branch_kernels {
            contract!(k % 2 == 1, "stream kernel {} must be odd", k);
        }
        contract!(self.branch_channels >= 4, "branch width must be at least 4");
        contract!(self.reorg_level < 6, "reorg level must name an encoder layer");
        Ok(())
    }

    /// Architecture as checkpoint entries so saved models are
    /// self-describing.
    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let vec_entry = |name: &str, vals: Vec<f64>| {
            let len = vals.len();
            (
                String::from(name),
                Tensor::new(Shape::nchw(1, 1, 1, len), vals).expect("config entry"),
            )
        };
        let bpa = alloc::vec![
            if self.bpa.softmax_range { 1.0 } else { 0.0 },
            if self.bpa.residual { 1.0 } else { 0.0 },
            if self.bpa.sigma.is_some() { 1.0 } else { 0.0 },
            self.bpa.sigma.unwrap_or(0.0),
        ];
        alloc::vec![
            vec_entry(
                "cfg.encoder_channels",
                self.encoder_channels.iter().map(|&v| v as f64).collect()
            ),
            vec_entry(
                "cfg.decoder_channels",
                self.decoder_channels.iter().map(|&v| v as f64).collect()
            ),
            vec_entry(
                "cfg.residual_dilations",
                self.residual_dilations.iter().map(|&v| v as f64).collect()
            ),
            vec_entry(
                "cfg.branch_kernels",
                self.branch_kernels.iter().map(|&v| v as f64).collect()
            ),
            vec_entry(
                "cfg.branch_channels",
                alloc::vec![self.branch_channels as f64]
            ),
            vec_entry(
                "cfg.disc_channels",
                self.disc_channels.iter().map(|&v| v as f64).collect()
            ),
            vec_entry("cfg.reorg_level", alloc::vec![self.reorg_level as f64]),
            vec_entry("cfg.bpa", bpa),
        ]
    }

    pub fn from_entries(entries: &BTreeMap<String, Tensor>) -> Result<Self> {
        let get = |name: &str| -> Result<&Tensor> {
            entries.get(name).ok_or_else(|| {
                crate::error::Error::Format(format!("checkpoint missing {name}"))
            })
        };
        let usizes = |t: &Tensor| -> Vec<usize> { t.data().iter().map(|&v| v as usize).collect() };
        let enc = usizes(get("cfg.encoder_channels")?);
        let dec = usizes(get("cfg.decoder_channels")?);
        let kernels = usizes(get("cfg.branch_kernels")?);
        let disc = usizes(get("cfg.disc_channels")?);
        contract!(
            enc.len() == 6 && dec.len() == 5 && kernels.len() == 3 && disc.len() == 4,
            "malformed architecture entries in checkpoint"
        );
        let bpa_raw = get("cfg.bpa")?;
        contract!(bpa_raw.count() == 4, "malformed cfg.bpa entry");
        let b = bpa_raw.data();
        let cfg = GeneratorConfig {
            encoder_channels: [enc[0], enc[1], enc[2], enc[3], enc[4], enc[5]],
            decoder_channels: [dec[0], dec[1], dec[2], dec[3], dec[4]],
            residual_dilations: usizes(get("cfg.residual_dilations")?),
            branch_kernels: [kernels[0], kernels[1], kernels[2]],
            branch_channels: get("cfg.branch_channels")?.data()[0] as usize,
            disc_channels: [disc[0], disc[1], disc[2], disc[3]],
            reorg_level: get("cfg.reorg_level")?.data()[0] as usize,
            bpa: BpaConfig {
                softmax_range: b[0] != 0.0,
                residual: b[1] != 0.0,
                sigma: (b[2] != 0.0).then_some(b[3]),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Rebuilds a model from a decoded checkpoint: architecture entries,
/// parameters, and discriminator spectral state.
pub fn model_from_entries(entries: &BTreeMap<String, Tensor>) -> Result<MEDFEModel> {
    let cfg = GeneratorConfig::from_entries(entries)?;
    let mut model = MEDFEModel::new(cfg, 0)?;
    model.load_params(entries)?;
    model.disc_global.load_state(entries);
    model.disc_local.load_state(entries);
    Ok(model)
}

// ---- multi-scale filling branch ------------------------------------------------

/// Three parallel streams of five partial convolutions each, kernels per
/// stream, concatenated and mapped back to the input width by a 1×1 conv.
pub struct Branch {
    pub streams: Vec<Vec<PartialConvLayer>>,
    pub fuse: Conv2dLayer,
}

pub const STREAM_DEPTH: usize = 5;

impl Branch {
    fn new(name: &str, rng: &mut SeedRng, channels: usize, kernels: [usize; 3]) -> Result<Self> {
        let mut streams = Vec::new();
        for (si, &k) in kernels.iter().enumerate() {
            let mut layers = Vec::new();
            for li in 0..STREAM_DEPTH {
                layers.push(PartialConvLayer::new(
                    &format!("{name}.s{si}.l{li}"),
                    rng,
                    channels,
                    channels,
                    k,
                    1,
                )?);
            }
            streams.push(layers);
        }
        Ok(Branch {
            streams,
            fuse: Conv2dLayer::new(
                &format!("{name}.fuse"),
                rng,
                3 * channels,
                channels,
                1,
                1,
                0,
                1,
                true,
            ),
        })
    }

    /// Fills holes in `f` under `mask` (resized to `f`'s grid by the
    /// caller). Returns the fused feature and the union of the streams'
    /// final masks: a position counts as filled once any stream filled it.
    pub fn forward(
        &self,
        tape: &Tape,
        bind: &mut Binding,
        f: &Var,
        mask: &Tensor,
    ) -> Result<(Var, Tensor)> {
        let mut outs = Vec::with_capacity(self.streams.len());
        let mut union: Option<Tensor> = None;
        for stream in &self.streams {
            let mut h = f.clone();
            let mut m = mask.clone();
            for layer in stream {
                let (next, next_mask) = layer.forward(tape, bind, &h, &m)?;
                h = tape.leaky_relu(&next, LEAKY_SLOPE);
                m = next_mask;
            }
            union = Some(match union {
                None => m,
                Some(u) => u.zip(&m, f64::max)?,
            });
            outs.push(h);
        }
        let refs: Vec<&Var> = outs.iter().collect();
        let cat = tape.concat(1, &refs)?;
        let fused = self.fuse.forward(tape, bind, &cat)?;
        Ok((fused, union.expect("streams exist")))
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for s in &self.streams {
            for l in s {
                l.visit(f);
            }
        }
        self.fuse.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for s in &mut self.streams {
            for l in s {
                l.visit_mut(f);
            }
        }
        self.fuse.visit_mut(f);
    }
}

// ---- generator -------------------------------------------------------------------

pub struct Generator {
    pub enc: Vec<Conv2dLayer>,
    pub res: Vec<ResidualBlock>,
    pub reorg_te: Conv2dLayer,
    pub reorg_st: Conv2dLayer,
    pub branch_te: Branch,
    pub branch_st: Branch,
    pub eq: EqualizeParams,
    pub head_te: Conv2dLayer,
    pub head_st: Conv2dLayer,
    pub dec: Vec<ConvT2dLayer>,
    pub skip: Vec<Conv2dLayer>,
    pub out_layer: ConvT2dLayer,
    reorg_level: usize,
    bpa_cfg: BpaConfig,
    kernel_cache: RefCell<BTreeMap<(usize, usize), SpatialKernel>>,
}

/// Everything a generator forward pass produces. The intermediate
/// features stay available for supervision and visualization.
pub struct GenOutputs {
    pub i_out: Var,
    pub i_ote: Var,
    pub i_ost: Var,
    pub f_te: Var,
    pub f_st: Var,
    pub f_fte: Var,
    pub f_fst: Var,
    pub f_sf: Var,
    pub f_equal: Var,
    pub mask_te: Tensor,
    pub mask_st: Tensor,
    pub reorg_size: (usize, usize),
}

impl Generator {
    fn new(cfg: &GeneratorConfig, rng: &mut SeedRng) -> Result<Self> {
        let ec = cfg.encoder_channels;
        let dc = cfg.decoder_channels;
        let bc = cfg.branch_channels;
        let mut enc = Vec::new();
        let mut in_c = 4; // masked RGB + the mask channel
        for (i, &out_c) in ec.iter().enumerate() {
            enc.push(Conv2dLayer::new(
                &format!("gen.enc{i}"),
                rng,
                in_c,
                out_c,
                3,
                2,
                1,
                1,
                true,
            ));
            in_c = out_c;
        }
        let res = cfg
            .residual_dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ResidualBlock::new(&format!("gen.res{i}"), rng, ec[5], d))
            .collect();
        let reorg_te = Conv2dLayer::new(
            "gen.reorg_te",
            rng,
            ec[0] + ec[1] + ec[2],
            bc,
            1,
            1,
            0,
            1,
            true,
        );
        let reorg_st = Conv2dLayer::new(
            "gen.reorg_st",
            rng,
            ec[3] + ec[4] + ec[5],
            bc,
            1,
            1,
            0,
            1,
            true,
        );
        let branch_te = Branch::new("gen.branch_te", rng, bc, cfg.branch_kernels)?;
        let branch_st = Branch::new("gen.branch_st", rng, bc, cfg.branch_kernels)?;
        let eq = EqualizeParams::new("gen.eq", rng, bc, cfg.bpa)?;
        let mut head_te = Conv2dLayer::new("gen.head_te", rng, bc, 3, 1, 1, 0, 1, true);
        head_te.weight = head_te.weight.map(|v| v * 0.25);
        let mut head_st = Conv2dLayer::new("gen.head_st", rng, bc, 3, 1, 1, 0, 1, true);
        head_st.weight = head_st.weight.map(|v| v * 0.25);
        let mut dec = Vec::new();
        let mut skip = Vec::new();
        let mut din = ec[5];
        for (i, &dout) in dc.iter().enumerate() {
            dec.push(ConvT2dLayer::new(
                &format!("gen.dec{i}"),
                rng,
                din,
                dout,
                4,
                2,
                1,
                true,
            ));
            // Identity on the decoder half, zero on the equalized half:
            // the skip starts as a pass-through and learns how much of
            // the equalized feature to mix in.
            let mut adapter = Conv2dLayer::new(
                &format!("gen.skip{i}"),
                rng,
                dout + bc,
                dout,
                1,
                1,
                0,
                1,
                true,
            );
            adapter.weight = Tensor::from_fn(Shape::nchw(dout, dout + bc, 1, 1), |idx| {
                let oc = idx / (dout + bc);
                let ic = idx % (dout + bc);
                if ic == oc {
                    1.0
                } else {
                    0.0
                }
            });
            skip.push(adapter);
            din = dout;
        }
        // Small output head so tanh starts unsaturated near mid-gray.
        let mut out_layer = ConvT2dLayer::new("gen.out", rng, dc[4], 3, 4, 2, 1, true);
        out_layer.weight = out_layer.weight.map(|v| v * 0.25);
        Ok(Generator {
            enc,
            res,
            reorg_te,
            reorg_st,
            branch_te,
            branch_st,
            eq,
            head_te,
            head_st,
            dec,
            skip,
            out_layer,
            reorg_level: cfg.reorg_level,
            bpa_cfg: cfg.bpa,
            kernel_cache: RefCell::new(BTreeMap::new()),
        })
    }

    fn kernel_for(&self, h: usize, w: usize) -> Result<SpatialKernel> {
        if let Some(k) = self.kernel_cache.borrow().get(&(h, w)) {
            return Ok(SpatialKernel {
                h: k.h,
                w: k.w,
                sigma: k.sigma,
                weights: k.weights.clone(),
            });
        }
        let sigma = self.bpa_cfg.sigma.unwrap_or_else(|| default_sigma(h, w));
        let kernel = SpatialKernel::new(h, w, sigma)?;
        self.kernel_cache.borrow_mut().insert(
            (h, w),
            SpatialKernel {
                h: kernel.h,
                w: kernel.w,
                sigma: kernel.sigma,
                weights: kernel.weights.clone(),
            },
        );
        Ok(kernel)
    }

    /// Six encoder features at (ceil-)halved resolutions.
    pub fn encode(&self, tape: &Tape, bind: &mut Binding, input: &Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(6);
        let mut h = input.clone();
        for layer in &self.enc {
            let c = layer.forward(tape, bind, &h)?;
            h = tape.leaky_relu(&c, LEAKY_SLOPE);
            feats.push(h.clone());
        }
        Ok(feats)
    }

    /// Resizes the selected encoder features to the reorganization size,
    /// concatenates, and maps to the branch width with a 1×1 conv.
    pub fn reorganize(
        &self,
        tape: &Tape,
        bind: &mut Binding,
        feats: &[Var],
        texture: bool,
        size: (usize, usize),
    ) -> Result<Var> {
        let (range, layer) = if texture {
            (0..3, &self.reorg_te)
        } else {
            (3..6, &self.reorg_st)
        };
        let mut resized = Vec::new();
        for i in range {
            resized.push(tape.resize(&feats[i], ResizeMode::Bilinear, size)?);
        }
        let refs: Vec<&Var> = resized.iter().collect();
        let cat = tape.concat(1, &refs)?;
        layer.forward(tape, bind, &cat)
    }

    pub fn forward(
        &self,
        tape: &Tape,
        bind: &mut Binding,
        image: &Var,
        mask: &Tensor,
    ) -> Result<GenOutputs> {
        let s = image.shape();
        contract!(s.c() == 3, "generator expects RGB input, got {}", s);
        contract!(
            s.h() % 2 == 0 && s.w() % 2 == 0 && s.h() >= 8 && s.w() >= 8,
            "generator input must be even-sized and at least 8x8, got {}",
            s
        );
        let ms = mask.shape();
        contract!(
            ms.n() == s.n() && ms.c() == 1 && ms.h() == s.h() && ms.w() == s.w(),
            "mask {} does not match image {}",
            ms,
            s
        );

        let mask_var = tape.constant(mask.clone());
        let masked = tape.mul(image, &mask_var)?;
        let input = tape.concat(1, &[&masked, &mask_var])?;

        let feats = self.encode(tape, bind, &input)?;
        let mut r = feats[5].clone();
        for block in &self.res {
            r = block.forward(tape, bind, &r)?;
        }

        let rl = self.reorg_level;
        let reorg = (feats[rl].shape().h(), feats[rl].shape().w());
        let f_te = self.reorganize(tape, bind, &feats, true, reorg)?;
        let f_st = self.reorganize(tape, bind, &feats, false, reorg)?;

        let mask_reorg = resize_nearest_value(mask, reorg);
        let (f_fte, mask_te) = self.branch_te.forward(tape, bind, &f_te, &mask_reorg)?;
        let (f_fst, mask_st) = self.branch_st.forward(tape, bind, &f_st, &mask_reorg)?;

        let kernel = self.kernel_for(reorg.0, reorg.1)?;
        let (f_sf, f_equal) = equalize(tape, bind, &f_fte, &f_fst, &self.eq, &kernel)?;

        let i_ote = tape.tanh(&self.head_te.forward(tape, bind, &f_fte)?);
        let i_ost = tape.tanh(&self.head_st.forward(tape, bind, &f_fst)?);

        // Decoder: each level mirrors an encoder feature's size; the
        // equalized feature joins at every level via resize-concat-1×1.
        let mut d = r;
        for i in 0..self.dec.len() {
            let up = self.dec[i].forward(tape, bind, &d)?;
            let mut h = tape.leaky_relu(&up, LEAKY_SLOPE);
            let target = {
                let fs = feats[4 - i].shape();
                (fs.h(), fs.w())
            };
            if (h.shape().h(), h.shape().w()) != target {
                h = tape.resize(&h, ResizeMode::Nearest, target)?;
            }
            let sk = tape.resize(&f_equal, ResizeMode::Bilinear, target)?;
            let cat = tape.concat(1, &[&h, &sk])?;
            d = self.skip[i].forward(tape, bind, &cat)?;
        }
        let mut pre = self.out_layer.forward(tape, bind, &d)?;
        if (pre.shape().h(), pre.shape().w()) != (s.h(), s.w()) {
            pre = tape.resize(&pre, ResizeMode::Bilinear, (s.h(), s.w()))?;
        }
        let i_out = tape.tanh(&pre);

        Ok(GenOutputs {
            i_out,
            i_ote,
            i_ost,
            f_te,
            f_st,
            f_fte,
            f_fst,
            f_sf,
            f_equal,
            mask_te,
            mask_st,
            reorg_size: reorg,
        })
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for l in &self.enc {
            l.visit(f);
        }
        for b in &self.res {
            b.visit(f);
        }
        self.reorg_te.visit(f);
        self.reorg_st.visit(f);
        self.branch_te.visit(f);
        self.branch_st.visit(f);
        self.eq.visit(f);
        self.head_te.visit(f);
        self.head_st.visit(f);
        for l in &self.dec {
            l.visit(f);
        }
        for l in &self.skip {
            l.visit(f);
        }
        self.out_layer.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for l in &mut self.enc {
            l.visit_mut(f);
        }
        for b in &mut self.res {
            b.visit_mut(f);
        }
        self.reorg_te.visit_mut(f);
        self.reorg_st.visit_mut(f);
        self.branch_te.visit_mut(f);
        self.branch_st.visit_mut(f);
        self.eq.visit_mut(f);
        self.head_te.visit_mut(f);
        self.head_st.visit_mut(f);
        for l in &mut self.dec {
            l.visit_mut(f);
        }
        for l in &mut self.skip {
            l.visit_mut(f);
        }
        self.out_layer.visit_mut(f);
    }
}

// ---- discriminators ------------------------------------------------------------------

/// Spectrally normalized stride-2 convolution.
pub struct SnConv2d {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub sn: SpectralNorm,
    pub stride: usize,
    pub pad: usize,
}

impl SnConv2d {
    fn new(name: &str, rng: &mut SeedRng, in_c: usize, out_c: usize, k: usize) -> Self {
        SnConv2d {
            name: String::from(name),
            weight: crate::layers::kaiming(rng, Shape::nchw(out_c, in_c, k, k), in_c * k * k),
            bias: Tensor::zeros(Shape::nchw(1, out_c, 1, 1)),
            sn: SpectralNorm::new(out_c, 0x5eed ^ name.len() as u64),
            stride: 2,
            pad: 1,
        }
    }

    fn forward(&self, tape: &Tape, bind: &mut Binding, x: &Var) -> Result<Var> {
        let w = bind.var(&format!("{}.weight", self.name), &self.weight);
        let w = self.sn.normalized(tape, &w);
        let b = bind.var(&format!("{}.bias", self.name), &self.bias);
        tape.conv2d(x, &w, Some(&b), self.stride, self.pad, 1)
    }
}

/// Five spectrally normalized stride-2 convs ending in a one-channel
/// patch score map (pre-sigmoid).
pub struct Discriminator {
    pub convs: Vec<SnConv2d>,
}

impl Discriminator {
    fn new(prefix: &str, cfg: &GeneratorConfig, rng: &mut SeedRng) -> Self {
        let dc = cfg.disc_channels;
        let widths = [dc[0], dc[1], dc[2], dc[3], 1];
        let mut convs = Vec::new();
        let mut in_c = 3;
        for (i, &out_c) in widths.iter().enumerate() {
            convs.push(SnConv2d::new(
                &format!("{prefix}.conv{i}"),
                rng,
                in_c,
                out_c,
                4,
            ));
            in_c = out_c;
        }
        Discriminator { convs }
    }

    pub fn forward(&self, tape: &Tape, bind: &mut Binding, image: &Var) -> Result<Var> {
        let mut h = image.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, bind, &h)?;
            if i + 1 < self.convs.len() {
                h = tape.leaky_relu(&h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// One power iteration per conv; call once per training step.
    pub fn update_spectral_state(&mut self) {
        for c in &mut self.convs {
            c.sn.update(&c.weight);
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for c in &self.convs {
            f(&format!("{}.weight", c.name), &c.weight);
            f(&format!("{}.bias", c.name), &c.bias);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for c in &mut self.convs {
            f(&format!("{}.weight", c.name), &mut c.weight);
            f(&format!("{}.bias", c.name), &mut c.bias);
        }
    }

    /// Spectral-norm u vectors; training state, not trainable parameters.
    pub fn state_entries(&self) -> Vec<(String, Tensor)> {
        self.convs
            .iter()
            .map(|c| {
                (
                    format!("{}.sn_u", c.name),
                    Tensor::new(Shape::nchw(1, 1, 1, c.sn.u.len()), c.sn.u.clone())
                        .expect("sn state"),
                )
            })
            .collect()
    }

    pub fn load_state(&mut self, entries: &BTreeMap<String, Tensor>) {
        for c in &mut self.convs {
            if let Some(u) = entries.get(&format!("{}.sn_u", c.name)) {
                if u.count() == c.sn.u.len() {
                    c.sn.u = u.data().to_vec();
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DiscKind {
    Global,
    Local,
}

/// Crops each sample's hole bounding box and resizes it to the fixed
/// local-discriminator patch size.
pub fn local_patches(tape: &Tape, image: &Var, boxes: &[HoleBox]) -> Result<Var> {
    let s = image.shape();
    contract!(
        boxes.len() == s.n(),
        "{} boxes for batch of {}",
        boxes.len(),
        s.n()
    );
    let mut patches = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        let sample = tape.slice_batch(image, i, 1)?;
        let crop = tape.crop_spatial(&sample, b.y0, b.x0, b.h, b.w)?;
        patches.push(tape.resize(&crop, ResizeMode::Bilinear, (LOCAL_PATCH, LOCAL_PATCH))?);
    }
    let refs: Vec<&Var> = patches.iter().collect();
    tape.concat(0, &refs)
}

/// Boxes of every sample in a mask batch; errors when a sample has no hole.
pub fn hole_boxes(mask: &Tensor) -> Result<Vec<HoleBox>> {
    let mut boxes = Vec::with_capacity(mask.shape().n());
    for i in 0..mask.shape().n() {
        boxes.push(hole_bbox(mask, i).ok_or_else(|| {
            crate::error::Error::Contract(format!("sample {i} has no hole for the local crop"))
        })?);
    }
    Ok(boxes)
}

// ---- whole model ------------------------------------------------------------------------

pub struct MEDFEModel {
    pub cfg: GeneratorConfig,
    pub gen: Generator,
    pub disc_global: Discriminator,
    pub disc_local: Discriminator,
}

impl MEDFEModel {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeedRng::new(seed);
        let gen = Generator::new(&cfg, &mut rng)?;
        let disc_global = Discriminator::new("dg", &cfg, &mut rng);
        let disc_local = Discriminator::new("dl", &cfg, &mut rng);
        Ok(MEDFEModel {
            cfg,
            gen,
            disc_global,
            disc_local,
        })
    }

    pub fn discriminator_forward(
        &self,
        tape: &Tape,
        bind: &mut Binding,
        image: &Var,
        which: DiscKind,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        match which {
            DiscKind::Global => self.disc_global.forward(tape, bind, image),
            DiscKind::Local => {
                let mask = mask.ok_or_else(|| {
                    crate::error::Error::Contract("local discriminator needs the mask".into())
                })?;
                let boxes = hole_boxes(mask)?;
                let patches = local_patches(tape, image, &boxes)?;
                self.disc_local.forward(tape, bind, &patches)
            }
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.gen.visit(f);
        self.disc_global.visit(f);
        self.disc_local.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.gen.visit_mut(f);
        self.disc_global.visit_mut(f);
        self.disc_local.visit_mut(f);
    }

    pub fn param_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((String::from(name), t.clone())));
        out
    }

    pub fn load_params(&mut self, entries: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut missing = Vec::new();
        self.visit_params_mut(&mut |name, t| match entries.get(name) {
            Some(v) if v.shape() == t.shape() => *t = v.clone(),
            Some(v) => missing.push(format!("{name} (shape {} vs {})", v.shape(), t.shape())),
            None => missing.push(String::from(name)),
        });
        contract!(
            missing.is_empty(),
            "checkpoint missing or mismatched parameters: {}",
            missing.join(", ")
        );
        Ok(())
    }

    /// Tape-free evaluation: full forward plus compositing. Used by the
    /// inference, evaluation, and visualization commands.
    pub fn generate(&self, image: &Tensor, mask: &Tensor) -> Result<GenEval> {
        let tape = Tape::new();
        let mut bind = Binding::new(&tape, false);
        let img = tape.constant(image.clone());
        let out = self.gen.forward(&tape, &mut bind, &img, mask)?;
        let i_out = out.i_out.value().clone();
        let i_comp = composite(image, &i_out, mask)?;
        Ok(GenEval {
            i_out,
            i_comp,
            i_ote: out.i_ote.value().clone(),
            i_ost: out.i_ost.value().clone(),
            f_te: out.f_te.value().clone(),
            f_st: out.f_st.value().clone(),
            f_fte: out.f_fte.value().clone(),
            f_fst: out.f_fst.value().clone(),
            f_sf: out.f_sf.value().clone(),
            f_equal: out.f_equal.value().clone(),
        })
    }
}

pub struct GenEval {
    pub i_out: Tensor,
    pub i_comp: Tensor,
    pub i_ote: Tensor,
    pub i_ost: Tensor,
    pub f_te: Tensor,
    pub f_st: Tensor,
    pub f_fte: Tensor,
    pub f_fst: Tensor,
    pub f_sf: Tensor,
    pub f_equal: Tensor,
}

/// M⊙I_gt + (1−M)⊙I_out: ground truth outside the hole, prediction inside.
pub fn composite(i_gt: &Tensor, i_out: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let s = i_gt.shape();
    contract!(
        i_out.shape() == s,
        "composite shapes {} vs {}",
        i_out.shape(),
        s
    );
    let ms = mask.shape();
    contract!(
        ms.n() == s.n() && ms.c() == 1 && ms.h() == s.h() && ms.w() == s.w(),
        "composite mask {} vs image {}",
        ms,
        s
    );
    let plane = s.h() * s.w();
    let out = Tensor::from_fn(s, |idx| {
        let w = idx % plane;
        let n = idx / (s.c() * plane);
        let m = mask.data()[n * plane + w];
        m * i_gt.data()[idx] + (1.0 - m) * i_out.data()[idx]
    });
    Ok(out)
}
