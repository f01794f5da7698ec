//! Seeded randomness. Everything random in this crate flows through a
//! ChaCha8 stream so runs are reproducible from a single u64 seed and the
//! stream position can be checkpointed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Shape, Tensor};

pub struct SeedRng(ChaCha8Rng);

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// A child generator seeded from this one. Used to give subsystems
    /// independent streams that stay reproducible.
    pub fn fork(&mut self) -> SeedRng {
        SeedRng::new(self.0.random())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn uniform_tensor(&mut self, shape: Shape, lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.uniform(lo, hi))
    }

    pub fn normal_tensor(&mut self, shape: Shape, std: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.normal() * std)
    }

    /// (seed, word position) pair; enough to restore the stream exactly.
    pub fn state(&self) -> ([u8; 32], u128) {
        (self.0.get_seed(), self.0.get_word_pos())
    }

    pub fn restore(seed: [u8; 32], word_pos: u128) -> Self {
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        SeedRng(rng)
    }
}
