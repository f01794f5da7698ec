//! Dense rank-4 tensor storage.
//!
//! Values are 64-bit floats in row-major order. The four dims are usually
//! interpreted as (batch, channel, height, width), but some ops give them
//! other meanings (e.g. the unfold output uses (n, h·w, k·k, c)).

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// Rank-4 shape. Lower-rank data uses leading/trailing singleton dims.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2] * self.0[3]
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    /// Row-major flat offset of (n, c, h, w).
    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }

    /// Row-major strides.
    #[inline]
    pub fn strides(&self) -> [usize; 4] {
        let [_, c, h, w] = self.0;
        [c * h * w, h * w, w, 1]
    }

    /// Strides with broadcast dims (size 1) zeroed, for indexing this
    /// shape from the index space of `out`.
    pub(crate) fn broadcast_strides(&self, out: &Shape) -> [usize; 4] {
        let s = self.strides();
        let mut b = [0usize; 4];
        for i in 0..4 {
            b[i] = if self.0[i] == out.0[i] { s[i] } else { 0 };
        }
        b
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.0[0], self.0[1], self.0[2], self.0[3]
        )
    }
}

/// Immutable dense tensor. Cloning shares storage.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        contract!(
            data.len() == shape.count(),
            "tensor shape {} needs {} values, got {}",
            shape,
            shape.count(),
            data.len()
        );
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            data: Arc::new(vec![0.0; shape.count()]),
            shape,
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            data: Arc::new(vec![value; shape.count()]),
            shape,
        }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..shape.count()).map(|i| f(i)).collect();
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.offset(n, c, h, w)]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        contract!(self.count() == 1, "item() on tensor of shape {}", self.shape);
        Ok(self.data[0])
    }

    /// Same storage, different shape (element counts must agree).
    pub fn reshaped(&self, shape: Shape) -> Result<Tensor> {
        contract!(
            shape.count() == self.count(),
            "reshape {} -> {} changes element count",
            self.shape,
            shape
        );
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Elementwise combination of two same-shape tensors (no broadcast).
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        contract!(
            self.shape == other.shape,
            "zip of {} with {}",
            self.shape,
            other.shape
        );
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data: Arc::new(data),
        })
    }

    /// In-place mutation when uniquely owned, copy-on-write otherwise.
    /// Used by the optimizer; forward code treats tensors as immutable.
    pub fn update(&mut self, f: impl FnMut(&mut [f64])) {
        let mut f = f;
        f(Arc::make_mut(&mut self.data).as_mut_slice());
    }

    /// Max |a - b| over all elements.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        contract!(
            self.shape == other.shape,
            "max_abs_diff of {} with {}",
            self.shape,
            other.shape
        );
        let mut m: f64 = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            m = m.max(crate::mathfn::abs(a - b));
        }
        Ok(m)
    }
}
