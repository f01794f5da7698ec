//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Ops record one node each, in execution order, so the node list is a
//! topological order by construction. [`Tape::backward`] walks it in
//! reverse, accumulating (never overwriting) gradients across fan-out.
//! A tape lives for one forward/backward pass on one thread; tensors are
//! immutable once created.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{contract, Error, Result};
use crate::tensor::{Shape, Tensor};

pub(crate) mod conv;
pub(crate) mod linalg;
pub(crate) mod resize;

use conv::{ConvGeom, ConvTGeom};
pub use resize::ResizeMode;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle of a node on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

/// A tracked tensor: a value plus its node on the recording tape.
#[derive(Clone)]
pub struct Var {
    tape_id: u64,
    id: NodeId,
    value: Tensor,
}

impl Var {
    #[inline]
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    #[inline]
    pub fn id(&self) -> NodeId {
        self.id
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Abs,
    Ln,
    Exp,
    ClampMin(f64),
    /// x ↦ mul·x + add
    Affine { mul: f64, add: f64 },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReduceKind {
    Sum,
    Mean,
}

enum Back {
    Leaf,
    Unary {
        kind: UnaryKind,
        input: Tensor,
        output: Tensor,
    },
    Binary {
        kind: BinaryKind,
        a: Tensor,
        b: Tensor,
    },
    Reduce {
        kind: ReduceKind,
        reduced: [bool; 4],
        in_shape: Shape,
    },
    Matmul {
        a: Tensor,
        b: Tensor,
    },
    Reshape {
        in_shape: Shape,
    },
    Permute {
        perm: [usize; 4],
    },
    Concat {
        axis: usize,
        part_shapes: Vec<Shape>,
    },
    Crop {
        in_shape: Shape,
        y0: usize,
        x0: usize,
    },
    SliceBatch {
        in_shape: Shape,
        n0: usize,
    },
    Resize {
        mode: ResizeMode,
        in_shape: Shape,
    },
    Unfold {
        k: usize,
        in_shape: Shape,
    },
    Conv2d {
        input: Tensor,
        weight: Tensor,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Tensor,
        weight: Tensor,
        geom: ConvTGeom,
    },
}

struct Node {
    parents: Vec<NodeId>,
    needs_grad: bool,
    back: Back,
}

/// Recording tape. One training step, one thread.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: Vec<NodeId>, back: Back, value: Tensor, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            parents,
            needs_grad,
            back,
        });
        Var {
            tape_id: self.id,
            id,
            value,
        }
    }

    fn check_var(&self, v: &Var) {
        assert!(
            v.tape_id == self.id,
            "Var from a different tape used in an op"
        );
    }

    fn needs(&self, v: &Var) -> bool {
        self.nodes.borrow()[v.id.0].needs_grad
    }

    /// Registers a leaf tensor. Gradients are produced only for leaves
    /// created with `requires_grad = true`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Vec::new(), Back::Leaf, value, requires_grad)
    }

    /// Untracked leaf.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    // ---- elementwise ----------------------------------------------------

    fn unary(&self, kind: UnaryKind, x: &Var) -> Var {
        self.check_var(x);
        let out = unary_apply(kind, &x.value);
        let needs = self.needs(x);
        self.push(
            vec![x.id],
            Back::Unary {
                kind,
                input: x.value.clone(),
                output: out.clone(),
            },
            out,
            needs,
        )
    }

    pub fn sigmoid(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn leaky_relu(&self, x: &Var, alpha: f64) -> Var {
        self.unary(UnaryKind::LeakyRelu(alpha), x)
    }

    pub fn relu(&self, x: &Var) -> Var {
        self.unary(UnaryKind::LeakyRelu(0.0), x)
    }

    pub fn abs(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn ln(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Ln, x)
    }

    pub fn exp(&self, x: &Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn clamp_min(&self, x: &Var, floor: f64) -> Var {
        self.unary(UnaryKind::ClampMin(floor), x)
    }

    pub fn affine(&self, x: &Var, mul: f64, add: f64) -> Var {
        self.unary(UnaryKind::Affine { mul, add }, x)
    }

    pub fn scale(&self, x: &Var, mul: f64) -> Var {
        self.affine(x, mul, 0.0)
    }

    pub fn neg(&self, x: &Var) -> Var {
        self.scale(x, -1.0)
    }

    /// 1 - x.
    pub fn one_minus(&self, x: &Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    fn binary(&self, kind: BinaryKind, a: &Var, b: &Var) -> Result<Var> {
        self.check_var(a);
        self.check_var(b);
        let out = binary_apply(kind, &a.value, &b.value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            vec![a.id, b.id],
            Back::Binary {
                kind,
                a: a.value.clone(),
                b: b.value.clone(),
            },
            out,
            needs,
        ))
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    // ---- reductions ------------------------------------------------------

    fn reduce(&self, kind: ReduceKind, x: &Var, dims: &[usize]) -> Result<Var> {
        self.check_var(x);
        contract!(x.value.count() > 0, "reduce over empty tensor");
        let mut reduced = [false; 4];
        for &d in dims {
            contract!(d < 4, "reduce dim {} out of range", d);
            reduced[d] = true;
        }
        let out = reduce_apply(kind, &x.value, reduced);
        let needs = self.needs(x);
        Ok(self.push(
            vec![x.id],
            Back::Reduce {
                kind,
                reduced,
                in_shape: x.shape(),
            },
            out,
            needs,
        ))
    }

    pub fn sum(&self, x: &Var, dims: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, dims)
    }

    pub fn mean(&self, x: &Var, dims: &[usize]) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, dims)
    }

    pub fn sum_all(&self, x: &Var) -> Result<Var> {
        self.sum(x, &[0, 1, 2, 3])
    }

    pub fn mean_all(&self, x: &Var) -> Result<Var> {
        self.mean(x, &[0, 1, 2, 3])
    }

    // ---- linear algebra --------------------------------------------------

    /// Matrix product on the trailing two dims; the leading two dims are
    /// batch dims and broadcast (equal or 1).
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.check_var(a);
        self.check_var(b);
        let out = linalg::matmul_apply(&a.value, &b.value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            vec![a.id, b.id],
            Back::Matmul {
                a: a.value.clone(),
                b: b.value.clone(),
            },
            out,
            needs,
        ))
    }

    // ---- shape ops -------------------------------------------------------

    pub fn reshape(&self, x: &Var, shape: Shape) -> Result<Var> {
        self.check_var(x);
        let out = x.value.reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(
            vec![x.id],
            Back::Reshape {
                in_shape: x.shape(),
            },
            out,
            needs,
        ))
    }

    pub fn permute(&self, x: &Var, perm: [usize; 4]) -> Result<Var> {
        self.check_var(x);
        let mut seen = [false; 4];
        for &p in &perm {
            contract!(p < 4 && !seen[p], "invalid permutation {:?}", perm);
            seen[p] = true;
        }
        let out = permute_apply(&x.value, perm);
        let needs = self.needs(x);
        Ok(self.push(vec![x.id], Back::Permute { perm }, out, needs))
    }

    /// Concatenation along `axis` (0 or 1); remaining dims must agree.
    pub fn concat(&self, axis: usize, parts: &[&Var]) -> Result<Var> {
        contract!(axis < 2, "concat axis {} not supported", axis);
        contract!(!parts.is_empty(), "concat of zero tensors");
        for p in parts {
            self.check_var(p);
        }
        let values: Vec<&Tensor> = parts.iter().map(|p| &p.value).collect();
        let out = concat_apply(axis, &values)?;
        let needs = parts.iter().any(|p| self.needs(p));
        let part_shapes = parts.iter().map(|p| p.shape()).collect();
        Ok(self.push(
            parts.iter().map(|p| p.id).collect(),
            Back::Concat { axis, part_shapes },
            out,
            needs,
        ))
    }

    /// Spatial crop: keeps rows `y0..y0+h` and cols `x0..x0+w`.
    pub fn crop_spatial(&self, x: &Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        self.check_var(x);
        let s = x.shape();
        contract!(h >= 1 && w >= 1, "empty crop");
        contract!(
            y0 + h <= s.h() && x0 + w <= s.w(),
            "crop ({},{})+({},{}) exceeds {}",
            y0,
            x0,
            h,
            w,
            s
        );
        let out = crop_apply(&x.value, y0, x0, h, w);
        let needs = self.needs(x);
        Ok(self.push(
            vec![x.id],
            Back::Crop {
                in_shape: s,
                y0,
                x0,
            },
            out,
            needs,
        ))
    }

    /// Selects samples `n0..n0+len` along the batch axis.
    pub fn slice_batch(&self, x: &Var, n0: usize, len: usize) -> Result<Var> {
        self.check_var(x);
        let s = x.shape();
        contract!(
            len >= 1 && n0 + len <= s.n(),
            "batch slice {}..{} of {}",
            n0,
            n0 + len,
            s
        );
        let per = s.c() * s.h() * s.w();
        let data = x.value.data()[n0 * per..(n0 + len) * per].to_vec();
        let out = Tensor::new(Shape::nchw(len, s.c(), s.h(), s.w()), data)?;
        let needs = self.needs(x);
        Ok(self.push(
            vec![x.id],
            Back::SliceBatch { in_shape: s, n0 },
            out,
            needs,
        ))
    }

    pub fn resize(&self, x: &Var, mode: ResizeMode, target: (usize, usize)) -> Result<Var> {
        self.check_var(x);
        contract!(target.0 >= 1 && target.1 >= 1, "resize to zero size");
        let out = resize::resize_apply(&x.value, mode, target);
        let needs = self.needs(x);
        Ok(self.push(
            vec![x.id],
            Back::Resize {
                mode,
                in_shape: x.shape(),
            },
            out,
            needs,
        ))
    }

    /// Gathers the k×k neighborhood of every position into
    /// (n, h·w, k·k, c); out-of-bounds neighbors are zero.
    pub fn unfold(&self, x: &Var, k: usize) -> Result<Var> {
        self.check_var(x);
        contract!(k % 2 == 1, "unfold kernel {} must be odd", k);
        let out = conv::unfold_apply(&x.value, k);
        let needs = self.needs(x);
        Ok(self.push(
            vec![x.id],
            Back::Unfold {
                k,
                in_shape: x.shape(),
            },
            out,
            needs,
        ))
    }

    // ---- convolutions ----------------------------------------------------

    pub fn conv2d(
        &self,
        x: &Var,
        weight: &Var,
        bias: Option<&Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        self.check_var(x);
        self.check_var(weight);
        if let Some(b) = bias {
            self.check_var(b);
        }
        let geom = ConvGeom::infer(x.shape(), weight.shape(), stride, padding, dilation)?;
        if let Some(b) = bias {
            contract!(
                b.value.count() == geom.out_c,
                "conv bias has {} values for {} output channels",
                b.value.count(),
                geom.out_c
            );
        }
        let out = conv::conv2d_apply(&x.value, &weight.value, bias.map(|b| &b.value), geom);
        let mut parents = vec![x.id, weight.id];
        let mut needs = self.needs(x) || self.needs(weight);
        if let Some(b) = bias {
            parents.push(b.id);
            needs |= self.needs(b);
        }
        Ok(self.push(
            parents,
            Back::Conv2d {
                input: x.value.clone(),
                weight: weight.value.clone(),
                geom,
            },
            out,
            needs,
        ))
    }

    /// Transposed convolution; `weight` is (in_c, out_c, k, k). With the
    /// same weight tensor, this is the adjoint of `conv2d`.
    pub fn conv_transpose2d(
        &self,
        x: &Var,
        weight: &Var,
        bias: Option<&Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.check_var(x);
        self.check_var(weight);
        if let Some(b) = bias {
            self.check_var(b);
        }
        let geom = ConvTGeom::infer(x.shape(), weight.shape(), stride, padding)?;
        if let Some(b) = bias {
            contract!(
                b.value.count() == geom.out_c,
                "conv_transpose bias has {} values for {} output channels",
                b.value.count(),
                geom.out_c
            );
        }
        let out = conv::conv_t2d_apply(&x.value, &weight.value, bias.map(|b| &b.value), geom);
        let mut parents = vec![x.id, weight.id];
        let mut needs = self.needs(x) || self.needs(weight);
        if let Some(b) = bias {
            parents.push(b.id);
            needs |= self.needs(b);
        }
        Ok(self.push(
            parents,
            Back::ConvTranspose2d {
                input: x.value.clone(),
                weight: weight.value.clone(),
                geom,
            },
            out,
            needs,
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Backpropagates from a scalar loss. Every `requires_grad` leaf that
    /// the loss depends on receives dLoss/dLeaf; fan-out accumulates.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        self.check_var(loss);
        contract!(
            loss.value.count() == 1,
            "backward needs a scalar loss, got {}",
            loss.shape()
        );
        let nodes = self.nodes.borrow();
        let mut slots: Vec<Option<Tensor>> = vec![None; nodes.len()];
        slots[loss.id.0] = Some(Tensor::ones(loss.shape()));

        for id in (0..=loss.id.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                slots[id] = None;
                continue;
            }
            if slots[id].is_none() {
                continue;
            }
            if matches!(node.back, Back::Leaf) {
                continue; // keep the slot for the caller
            }
            let g = slots[id].take().unwrap();
            let deltas = backprop_node(&node.back, &g)?;
            for (parent, delta) in node.parents.iter().zip(deltas) {
                let Some(delta) = delta else { continue };
                if !nodes[parent.0].needs_grad {
                    continue;
                }
                accum(&mut slots[parent.0], delta)?;
            }
        }

        Ok(Gradients {
            tape_id: self.id,
            slots,
        })
    }
}

/// Gradient buffers produced by [`Tape::backward`], one per reached
/// `requires_grad` leaf, each shaped like its leaf.
pub struct Gradients {
    tape_id: u64,
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        assert!(v.tape_id == self.tape_id, "Var from a different tape");
        self.slots[v.id.0].as_ref()
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }
}

fn accum(slot: &mut Option<Tensor>, delta: Tensor) -> Result<()> {
    *slot = Some(match slot.take() {
        None => delta,
        Some(prev) => prev.zip(&delta, |a, b| a + b)?,
    });
    Ok(())
}

fn backprop_node(back: &Back, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
    Ok(match back {
        Back::Leaf => Vec::new(),
        Back::Unary {
            kind,
            input,
            output,
        } => vec![Some(unary_grad(*kind, g, input, output))],
        Back::Binary { kind, a, b } => {
            let da = binary_grad(*kind, g, a, b, true)?;
            let db = binary_grad(*kind, g, a, b, false)?;
            vec![Some(da), Some(db)]
        }
        Back::Reduce {
            kind,
            reduced,
            in_shape,
        } => vec![Some(reduce_grad(*kind, g, *reduced, *in_shape))],
        Back::Matmul { a, b } => {
            let (da, db) = linalg::matmul_grad(g, a, b)?;
            vec![Some(da), Some(db)]
        }
        Back::Reshape { in_shape } => vec![Some(g.reshaped(*in_shape)?)],
        Back::Permute { perm } => {
            let mut inv = [0usize; 4];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            vec![Some(permute_apply(g, inv))]
        }
        Back::Concat { axis, part_shapes } => concat_grad(*axis, g, part_shapes)
            .into_iter()
            .map(Some)
            .collect(),
        Back::Crop { in_shape, y0, x0 } => vec![Some(crop_grad(g, *in_shape, *y0, *x0))],
        Back::SliceBatch { in_shape, n0 } => {
            let per = in_shape.c() * in_shape.h() * in_shape.w();
            let mut data = vec![0.0f64; in_shape.count()];
            data[n0 * per..n0 * per + g.count()].copy_from_slice(g.data());
            vec![Some(Tensor::new(*in_shape, data)?)]
        }
        Back::Resize { mode, in_shape } => {
            vec![Some(resize::resize_grad(g, *mode, *in_shape))]
        }
        Back::Unfold { k, in_shape } => vec![Some(conv::unfold_grad(g, *k, *in_shape))],
        Back::Conv2d {
            input,
            weight,
            geom,
        } => conv::conv2d_grad(g, input, weight, *geom),
        Back::ConvTranspose2d {
            input,
            weight,
            geom,
        } => conv::conv_t2d_grad(g, input, weight, *geom),
    })
}

// ---- elementwise kernels ----------------------------------------------------

fn unary_apply(kind: UnaryKind, x: &Tensor) -> Tensor {
    use crate::mathfn as m;
    match kind {
        UnaryKind::Sigmoid => x.map(m::sigmoid),
        UnaryKind::Tanh => x.map(m::tanh),
        UnaryKind::LeakyRelu(alpha) => x.map(|v| if v > 0.0 { v } else { alpha * v }),
        UnaryKind::Abs => x.map(m::abs),
        UnaryKind::Ln => x.map(m::ln),
        UnaryKind::Exp => x.map(m::exp),
        UnaryKind::ClampMin(c) => x.map(|v| if v < c { c } else { v }),
        UnaryKind::Affine { mul, add } => x.map(|v| mul * v + add),
    }
}

fn unary_grad(kind: UnaryKind, g: &Tensor, input: &Tensor, output: &Tensor) -> Tensor {
    let gd = g.data();
    let xd = input.data();
    let yd = output.data();
    let out = match kind {
        UnaryKind::Sigmoid => Tensor::from_fn(g.shape(), |i| gd[i] * yd[i] * (1.0 - yd[i])),
        UnaryKind::Tanh => Tensor::from_fn(g.shape(), |i| gd[i] * (1.0 - yd[i] * yd[i])),
        UnaryKind::LeakyRelu(alpha) => Tensor::from_fn(g.shape(), |i| {
            gd[i] * if xd[i] > 0.0 { 1.0 } else { alpha }
        }),
        UnaryKind::Abs => Tensor::from_fn(g.shape(), |i| {
            gd[i] * if xd[i] > 0.0 {
                1.0
            } else if xd[i] < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        UnaryKind::Ln => Tensor::from_fn(g.shape(), |i| gd[i] / xd[i]),
        UnaryKind::Exp => Tensor::from_fn(g.shape(), |i| gd[i] * yd[i]),
        UnaryKind::ClampMin(c) => {
            Tensor::from_fn(g.shape(), |i| gd[i] * if xd[i] > c { 1.0 } else { 0.0 })
        }
        UnaryKind::Affine { mul, .. } => Tensor::from_fn(g.shape(), |i| gd[i] * mul),
    };
    out
}

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0usize; 4];
    for i in 0..4 {
        out[i] = match (a.0[i], b.0[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Contract(alloc::format!(
                    "shapes {} and {} do not broadcast",
                    a,
                    b
                )))
            }
        };
    }
    Ok(Shape(out))
}

fn binary_apply(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let f = |x: f64, y: f64| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    };
    if a.shape() == b.shape() {
        return a.zip(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let sa = a.shape().broadcast_strides(&out_shape);
    let sb = b.shape().broadcast_strides(&out_shape);
    let ad = a.data();
    let bd = b.data();
    let [d0, d1, d2, d3] = out_shape.0;
    let mut data = Vec::with_capacity(out_shape.count());
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..d3 {
                    data.push(f(ad[base_a + i3 * sa[3]], bd[base_b + i3 * sb[3]]));
                }
            }
        }
    }
    Tensor::new(out_shape, data)
}

/// d(a∘b)/d(side), reduced onto the (possibly broadcast) side's shape.
fn binary_grad(kind: BinaryKind, g: &Tensor, a: &Tensor, b: &Tensor, wrt_a: bool) -> Result<Tensor> {
    let out_shape = g.shape();
    let target = if wrt_a { a.shape() } else { b.shape() };
    let st = target.broadcast_strides(&out_shape);
    let sa = a.shape().broadcast_strides(&out_shape);
    let sb = b.shape().broadcast_strides(&out_shape);
    let gd = g.data();
    let ad = a.data();
    let bd = b.data();
    let mut acc = vec![0.0f64; target.count()];
    let [d0, d1, d2, d3] = out_shape.0;
    let mut i = 0usize;
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let base_t = i0 * st[0] + i1 * st[1] + i2 * st[2];
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..d3 {
                    let d = match (kind, wrt_a) {
                        (BinaryKind::Add, _) => 1.0,
                        (BinaryKind::Sub, true) => 1.0,
                        (BinaryKind::Sub, false) => -1.0,
                        (BinaryKind::Mul, true) => bd[base_b + i3 * sb[3]],
                        (BinaryKind::Mul, false) => ad[base_a + i3 * sa[3]],
                        (BinaryKind::Div, true) => 1.0 / bd[base_b + i3 * sb[3]],
                        (BinaryKind::Div, false) => {
                            let bv = bd[base_b + i3 * sb[3]];
                            -ad[base_a + i3 * sa[3]] / (bv * bv)
                        }
                    };
                    acc[base_t + i3 * st[3]] += gd[i] * d;
                    i += 1;
                }
            }
        }
    }
    Tensor::new(target, acc)
}

// ---- reductions ----------------------------------------------------------

fn reduce_apply(kind: ReduceKind, x: &Tensor, reduced: [bool; 4]) -> Tensor {
    let in_shape = x.shape();
    let mut out_dims = in_shape.0;
    let mut count = 1usize;
    for i in 0..4 {
        if reduced[i] {
            count *= out_dims[i];
            out_dims[i] = 1;
        }
    }
    let out_shape = Shape(out_dims);
    let so = out_shape.broadcast_strides(&in_shape);
    let mut acc = vec![0.0f64; out_shape.count()];
    let xd = x.data();
    let [d0, d1, d2, d3] = in_shape.0;
    let mut i = 0usize;
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let base = i0 * so[0] + i1 * so[1] + i2 * so[2];
                for i3 in 0..d3 {
                    acc[base + i3 * so[3]] += xd[i];
                    i += 1;
                }
            }
        }
    }
    if kind == ReduceKind::Mean {
        let inv = 1.0 / count as f64;
        for v in &mut acc {
            *v *= inv;
        }
    }
    Tensor::new(out_shape, acc).expect("reduce shape")
}

fn reduce_grad(kind: ReduceKind, g: &Tensor, reduced: [bool; 4], in_shape: Shape) -> Tensor {
    let mut count = 1usize;
    for i in 0..4 {
        if reduced[i] {
            count *= in_shape.0[i];
        }
    }
    let scale = match kind {
        ReduceKind::Sum => 1.0,
        ReduceKind::Mean => 1.0 / count as f64,
    };
    let so = g.shape().broadcast_strides(&in_shape);
    let gd = g.data();
    let [d0, d1, d2, d3] = in_shape.0;
    let mut data = Vec::with_capacity(in_shape.count());
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let base = i0 * so[0] + i1 * so[1] + i2 * so[2];
                for i3 in 0..d3 {
                    data.push(gd[base + i3 * so[3]] * scale);
                }
            }
        }
    }
    Tensor::new(in_shape, data).expect("reduce grad shape")
}

// ---- shape op kernels ------------------------------------------------------

fn permute_apply(x: &Tensor, perm: [usize; 4]) -> Tensor {
    let in_shape = x.shape();
    let in_strides = in_shape.strides();
    let out_dims = [
        in_shape.0[perm[0]],
        in_shape.0[perm[1]],
        in_shape.0[perm[2]],
        in_shape.0[perm[3]],
    ];
    let ps = [
        in_strides[perm[0]],
        in_strides[perm[1]],
        in_strides[perm[2]],
        in_strides[perm[3]],
    ];
    let xd = x.data();
    let mut data = Vec::with_capacity(x.count());
    for i0 in 0..out_dims[0] {
        for i1 in 0..out_dims[1] {
            for i2 in 0..out_dims[2] {
                let base = i0 * ps[0] + i1 * ps[1] + i2 * ps[2];
                for i3 in 0..out_dims[3] {
                    data.push(xd[base + i3 * ps[3]]);
                }
            }
        }
    }
    Tensor::new(Shape(out_dims), data).expect("permute shape")
}

fn concat_apply(axis: usize, parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0].shape();
    let mut axis_total = 0usize;
    for p in parts {
        let s = p.shape();
        for d in 0..4 {
            if d != axis {
                contract!(
                    s.0[d] == first.0[d],
                    "concat dim {} mismatch: {} vs {}",
                    d,
                    s,
                    first
                );
            }
        }
        axis_total += s.0[axis];
    }
    let mut out_dims = first.0;
    out_dims[axis] = axis_total;
    let out_shape = Shape(out_dims);

    // Split the index space into (pre, axis, post) blocks.
    let pre: usize = out_dims[..axis].iter().product();
    let post: usize = out_dims[axis + 1..].iter().product();
    let mut data = vec![0.0f64; out_shape.count()];
    let mut axis_off = 0usize;
    for p in parts {
        let alen = p.shape().0[axis];
        let pd = p.data();
        for ip in 0..pre {
            let src = &pd[ip * alen * post..(ip + 1) * alen * post];
            let dst_start = (ip * axis_total + axis_off) * post;
            data[dst_start..dst_start + alen * post].copy_from_slice(src);
        }
        axis_off += alen;
    }
    Tensor::new(out_shape, data)
}

fn concat_grad(axis: usize, g: &Tensor, part_shapes: &[Shape]) -> Vec<Tensor> {
    let out_dims = g.shape().0;
    let pre: usize = out_dims[..axis].iter().product();
    let post: usize = out_dims[axis + 1..].iter().product();
    let axis_total = out_dims[axis];
    let gd = g.data();
    let mut grads = Vec::with_capacity(part_shapes.len());
    let mut axis_off = 0usize;
    for s in part_shapes {
        let alen = s.0[axis];
        let mut data = vec![0.0f64; s.count()];
        for ip in 0..pre {
            let src_start = (ip * axis_total + axis_off) * post;
            data[ip * alen * post..(ip + 1) * alen * post]
                .copy_from_slice(&gd[src_start..src_start + alen * post]);
        }
        axis_off += alen;
        grads.push(Tensor::new(*s, data).expect("concat grad shape"));
    }
    grads
}

fn crop_apply(x: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let s = x.shape();
    let xd = x.data();
    let out_shape = Shape::nchw(s.n(), s.c(), h, w);
    let mut data = Vec::with_capacity(out_shape.count());
    for n in 0..s.n() {
        for c in 0..s.c() {
            for y in 0..h {
                let src = s.offset(n, c, y0 + y, x0);
                data.extend_from_slice(&xd[src..src + w]);
            }
        }
    }
    Tensor::new(out_shape, data).expect("crop shape")
}

fn crop_grad(g: &Tensor, in_shape: Shape, y0: usize, x0: usize) -> Tensor {
    let gs = g.shape();
    let gd = g.data();
    let mut data = vec![0.0f64; in_shape.count()];
    for n in 0..gs.n() {
        for c in 0..gs.c() {
            for y in 0..gs.h() {
                let src = gs.offset(n, c, y, 0);
                let dst = in_shape.offset(n, c, y0 + y, x0);
                data[dst..dst + gs.w()].copy_from_slice(&gd[src..src + gs.w()]);
            }
        }
    }
    Tensor::new(in_shape, data).expect("crop grad shape")
}
