//! Composite layers: plain and transposed convolution layers with named
//! parameters, partial convolution with mask update, squeeze-excitation,
//! dilated residual blocks, and spectral normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::rng::SeedRng;
use crate::tape::{NodeId, Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Records which tape leaf each named parameter was bound to during a
/// forward pass, so gradients can be routed back to the parameters.
/// An override map substitutes externally created vars for named
/// parameters, which is how whole-network gradient checks drive the
/// model with the checker's own leaves.
pub struct Binding<'t> {
    tape: &'t Tape,
    trainable: bool,
    overrides: alloc::collections::BTreeMap<String, Var>,
    pairs: Vec<(String, NodeId)>,
}

impl<'t> Binding<'t> {
    pub fn new(tape: &'t Tape, trainable: bool) -> Self {
        Binding {
            tape,
            trainable,
            overrides: alloc::collections::BTreeMap::new(),
            pairs: Vec::new(),
        }
    }

    pub fn with_overrides(
        tape: &'t Tape,
        overrides: alloc::collections::BTreeMap<String, Var>,
    ) -> Self {
        Binding {
            tape,
            trainable: false,
            overrides,
            pairs: Vec::new(),
        }
    }

    pub fn var(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(v) = self.overrides.get(name) {
            return v.clone();
        }
        let v = self.tape.leaf(value.clone(), self.trainable);
        if self.trainable {
            self.pairs.push((String::from(name), v.id()));
        }
        v
    }

    pub fn pairs(&self) -> &[(String, NodeId)] {
        &self.pairs
    }
}

/// Kaiming-style init for leaky-ReLU fan-in.
pub fn kaiming(rng: &mut SeedRng, shape: Shape, fan_in: usize) -> Tensor {
    let std = crate::mathfn::sqrt(2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64));
    rng.normal_tensor(shape, std)
}

// ---- plain convolution layer -------------------------------------------------

pub struct Conv2dLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        rng: &mut SeedRng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        Conv2dLayer {
            name: String::from(name),
            weight: kaiming(rng, Shape::nchw(out_c, in_c, k, k), in_c * k * k),
            bias: bias.then(|| Tensor::zeros(Shape::nchw(1, out_c, 1, 1))),
            stride,
            pad,
            dilation,
        }
    }

    pub fn forward(&self, tape: &Tape, bind: &mut Binding, x: &Var) -> Result<Var> {
        let w = bind.var(&format!("{}.weight", self.name), &self.weight);
        let b = self
            .bias
            .as_ref()
            .map(|b| bind.var(&format!("{}.bias", self.name), b));
        tape.conv2d(x, &w, b.as_ref(), self.stride, self.pad, self.dilation)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.name), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }
}

// ---- transposed convolution layer ---------------------------------------------

pub struct ConvT2dLayer {
    pub name: String,
    /// (in_c, out_c, k, k)
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvT2dLayer {
    pub fn new(
        name: &str,
        rng: &mut SeedRng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        ConvT2dLayer {
            name: String::from(name),
            weight: kaiming(rng, Shape::nchw(in_c, out_c, k, k), in_c * k * k),
            bias: bias.then(|| Tensor::zeros(Shape::nchw(1, out_c, 1, 1))),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &Tape, bind: &mut Binding, x: &Var) -> Result<Var> {
        let w = bind.var(&format!("{}.weight", self.name), &self.weight);
        let b = self
            .bias
            .as_ref()
            .map(|b| bind.var(&format!("{}.bias", self.name), b));
        tape.conv_transpose2d(x, &w, b.as_ref(), self.stride, self.pad)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.name), &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{}.bias", self.name), b);
        }
    }
}

// ---- partial convolution -------------------------------------------------------

/// Size-preserving (at stride 1) masked convolution with mask update.
pub struct PartialConvLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub k: usize,
    pub stride: usize,
}

impl PartialConvLayer {
    pub fn new(
        name: &str,
        rng: &mut SeedRng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        contract!(k % 2 == 1, "partial conv kernel {} must be odd", k);
        Ok(PartialConvLayer {
            name: String::from(name),
            weight: kaiming(rng, Shape::nchw(out_c, in_c, k, k), in_c * k * k),
            bias: Tensor::zeros(Shape::nchw(1, out_c, 1, 1)),
            k,
            stride,
        })
    }

    /// Per window W: out = (W·(x⊙m))·(Σ1/Σm) + bias where Σm > 0, else 0.
    /// Σ1 is the in-bounds tap count of the window (k² away from the
    /// borders), so an all-ones mask reduces to a plain convolution
    /// everywhere. The new mask marks windows that saw any valid pixel.
    pub fn forward(
        &self,
        tape: &Tape,
        bind: &mut Binding,
        x: &Var,
        mask: &Tensor,
    ) -> Result<(Var, Tensor)> {
        let xs = x.shape();
        let ms = mask.shape();
        contract!(
            ms.n() == xs.n() && ms.c() == 1 && ms.h() == xs.h() && ms.w() == xs.w(),
            "mask {} does not match input {}",
            ms,
            xs
        );
        contract!(
            crate::mask::is_binary(mask),
            "partial conv mask must be binary"
        );
        let pad = (self.k - 1) / 2;
        let w = bind.var(&format!("{}.weight", self.name), &self.weight);
        let b = bind.var(&format!("{}.bias", self.name), &self.bias);

        let mask_var = tape.constant(mask.clone());
        let masked = tape.mul(x, &mask_var)?;
        let conv = tape.conv2d(&masked, &w, None, self.stride, pad, 1)?;

        let msum = crate::tape::conv::window_sum(mask, self.k, self.stride, pad)?;
        let ones = Tensor::ones(Shape::nchw(ms.n(), 1, ms.h(), ms.w()));
        let wins = crate::tape::conv::window_sum(&ones, self.k, self.stride, pad)?;
        let ratio = msum.zip(&wins, |s, n| if s > 0.0 { n / s } else { 0.0 })?;
        let gate = msum.map(|s| if s > 0.0 { 1.0 } else { 0.0 });

        let scaled = tape.mul(&conv, &tape.constant(ratio))?;
        let bias_term = tape.mul(&b, &tape.constant(gate.clone()))?;
        let out = tape.add(&scaled, &bias_term)?;
        Ok((out, gate))
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.name), &self.weight);
        f(&format!("{}.bias", self.name), &self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

// ---- squeeze-excitation ---------------------------------------------------------

/// Channel reweighing: w = sigmoid(FC₂(relu(FC₁(spatial mean)))), applied
/// per channel. Hidden size is max(4, c/reduction).
pub struct SeBlock {
    pub name: String,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub channels: usize,
    pub hidden: usize,
}

pub const SE_REDUCTION: usize = 16;

impl SeBlock {
    pub fn new(name: &str, rng: &mut SeedRng, channels: usize) -> Result<Self> {
        let hidden = (channels / SE_REDUCTION).max(4);
        contract!(
            channels >= hidden,
            "squeeze-excitation needs at least {} channels, got {}",
            hidden,
            channels
        );
        Ok(SeBlock {
            name: String::from(name),
            w1: kaiming(rng, Shape::nchw(1, 1, channels, hidden), channels),
            b1: Tensor::zeros(Shape::nchw(1, 1, 1, hidden)),
            w2: kaiming(rng, Shape::nchw(1, 1, hidden, channels), hidden),
            b2: Tensor::zeros(Shape::nchw(1, 1, 1, channels)),
            channels,
            hidden,
        })
    }

    pub fn forward(&self, tape: &Tape, bind: &mut Binding, x: &Var) -> Result<Var> {
        let s = x.shape();
        contract!(
            s.c() == self.channels,
            "se block built for {} channels, got {}",
            self.channels,
            s
        );
        let w1 = bind.var(&format!("{}.w1", self.name), &self.w1);
        let b1 = bind.var(&format!("{}.b1", self.name), &self.b1);
        let w2 = bind.var(&format!("{}.w2", self.name), &self.w2);
        let b2 = bind.var(&format!("{}.b2", self.name), &self.b2);

        let squeezed = tape.mean(x, &[2, 3])?; // (n, c, 1, 1)
        let row = tape.reshape(&squeezed, Shape::nchw(1, 1, s.n(), s.c()))?;
        let h = tape.matmul(&row, &w1)?;
        let h = tape.add(&h, &b1)?;
        let h = tape.relu(&h);
        let h = tape.matmul(&h, &w2)?;
        let h = tape.add(&h, &b2)?;
        let gains = tape.sigmoid(&h);
        let gains = tape.reshape(&gains, Shape::nchw(s.n(), s.c(), 1, 1))?;
        tape.mul(x, &gains)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w1", self.name), &self.w1);
        f(&format!("{}.b1", self.name), &self.b1);
        f(&format!("{}.w2", self.name), &self.w2);
        f(&format!("{}.b2", self.name), &self.b2);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w1", self.name), &mut self.w1);
        f(&format!("{}.b1", self.name), &mut self.b1);
        f(&format!("{}.w2", self.name), &mut self.w2);
        f(&format!("{}.b2", self.name), &mut self.b2);
    }
}

// ---- dilated residual block ------------------------------------------------------

/// out = x + conv₂(leaky(conv₁(x))), both convs k3 with the given
/// dilation and size-preserving padding.
pub struct ResidualBlock {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    pub dilation: usize,
}

impl ResidualBlock {
    pub fn new(name: &str, rng: &mut SeedRng, channels: usize, dilation: usize) -> Self {
        let pad = dilation; // dilation·(k−1)/2 with k = 3
        ResidualBlock {
            conv1: Conv2dLayer::new(
                &format!("{name}.conv1"),
                rng,
                channels,
                channels,
                3,
                1,
                pad,
                dilation,
                true,
            ),
            conv2: Conv2dLayer::new(
                &format!("{name}.conv2"),
                rng,
                channels,
                channels,
                3,
                1,
                pad,
                dilation,
                true,
            ),
            dilation,
        }
    }

    pub fn forward(&self, tape: &Tape, bind: &mut Binding, x: &Var) -> Result<Var> {
        contract!(
            self.conv1.weight.shape().c() == x.shape().c(),
            "residual block channels {} vs input {}",
            self.conv1.weight.shape().c(),
            x.shape()
        );
        let h = self.conv1.forward(tape, bind, x)?;
        let h = tape.leaky_relu(&h, LEAKY_SLOPE);
        let h = self.conv2.forward(tape, bind, &h)?;
        tape.add(x, &h)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
    }
}

// ---- spectral normalization --------------------------------------------------------

/// Power-iteration estimate of a weight's top singular value, with the
/// weight flattened to (out_c × rest). `update` runs once per training
/// step; `normalized` divides by the current estimate (σ̂ treated as a
/// constant in the backward pass).
pub struct SpectralNorm {
    pub u: Vec<f64>,
    pub power_iterations: usize,
}

fn norm2(v: &[f64]) -> f64 {
    crate::mathfn::sqrt(v.iter().map(|x| x * x).sum())
}

impl SpectralNorm {
    pub fn new(out_c: usize, seed: u64) -> Self {
        let mut rng = SeedRng::new(seed);
        let mut u: Vec<f64> = (0..out_c).map(|_| rng.normal()).collect();
        let n = norm2(&u);
        for v in &mut u {
            *v /= n;
        }
        SpectralNorm {
            u,
            power_iterations: 1,
        }
    }

    fn mat_dims(weight: &Tensor) -> (usize, usize) {
        let s = weight.shape();
        (s.n(), s.c() * s.h() * s.w())
    }

    /// σ̂ = ‖Wᵀu‖ for the current u.
    pub fn sigma(&self, weight: &Tensor) -> f64 {
        let (rows, cols) = Self::mat_dims(weight);
        debug_assert_eq!(rows, self.u.len());
        let wd = weight.data();
        let mut v = alloc::vec![0.0f64; cols];
        for r in 0..rows {
            let ur = self.u[r];
            for c in 0..cols {
                v[c] += ur * wd[r * cols + c];
            }
        }
        norm2(&v)
    }

    /// One (or `power_iterations`) rounds of u ← norm(W · norm(Wᵀu)).
    /// A zero weight leaves u untouched.
    pub fn update(&mut self, weight: &Tensor) {
        let (rows, cols) = Self::mat_dims(weight);
        let wd = weight.data();
        for _ in 0..self.power_iterations {
            let mut v = alloc::vec![0.0f64; cols];
            for r in 0..rows {
                let ur = self.u[r];
                for c in 0..cols {
                    v[c] += ur * wd[r * cols + c];
                }
            }
            let vn = norm2(&v);
            if vn <= 1e-12 {
                return;
            }
            for x in &mut v {
                *x /= vn;
            }
            let mut u_new = alloc::vec![0.0f64; rows];
            for r in 0..rows {
                let mut s = 0.0;
                for c in 0..cols {
                    s += wd[r * cols + c] * v[c];
                }
                u_new[r] = s;
            }
            let un = norm2(&u_new);
            if un <= 1e-12 {
                return;
            }
            for x in &mut u_new {
                *x /= un;
            }
            self.u = u_new;
        }
    }

    /// weight / σ̂ on the tape. Zero weights pass through unchanged.
    pub fn normalized(&self, tape: &Tape, weight: &Var) -> Var {
        let sigma = self.sigma(weight.value());
        if sigma <= 1e-12 {
            return weight.clone();
        }
        tape.scale(weight, 1.0 / sigma)
    }
}
