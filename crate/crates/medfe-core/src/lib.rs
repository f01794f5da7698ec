//! Core library for the mutual encoder-decoder inpainting network with
//! feature equalization.
//!
//! Everything in this crate is pure computation over in-memory buffers: a
//! dense rank-4 tensor type with reverse-mode automatic differentiation,
//! the composite layers (partial convolution, squeeze-excitation, dilated
//! residual blocks, spectral normalization), the bilateral propagation
//! activation and its brute-force oracle, the generator/discriminator
//! networks, the loss suite, synthetic data generation, masks, and the
//! PSNR/SSIM metrics. File IO, the CLI, and on-disk formats live in the
//! companion `medfe` crate.
//!
//! The crate is `no_std` (with `alloc`); float transcendentals go through
//! `libm` so results do not depend on the host libm.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod equalize;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod mask;
mod mathfn;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod smooth;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
