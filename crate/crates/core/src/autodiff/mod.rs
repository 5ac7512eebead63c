//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records one forward computation; [`Var`] handles index into
//! it. Calling [`Var::backward`] on a scalar walks the tape in reverse and
//! accumulates cotangents into every tensor built with `requires_grad`.
//! The primitive set is deliberately small: elementwise arithmetic and
//! activations, conv2d (stride 1, same padding), nearest upsampling,
//! matmul, channel normalization, reductions, shape surgery, and the
//! complex measurement chain (unitary FFT, constant masks, magnitude).
//!
//! Shape errors are programming errors and panic at graph-build time;
//! data-dependent failures (non-scalar backward, non-finite gradients)
//! are reported as [`Error`] values.
//!
//! A tape is single-threaded; independent tapes may run concurrently.
//! Primitives that parallelize internally (conv2d, FFT) write disjoint
//! output slices, so results are bit-identical for any thread count.

pub mod adam;
pub mod check;
pub mod checkpoint;
pub mod complex;
mod ops;

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::rc::Rc;

/// A recorded operation: parent node ids plus whatever constants the
/// backward rule needs.
#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Rc<Vec<f64>>),
    Matmul(usize, usize),
    Conv2d { x: usize, w: usize, b: usize },
    Upsample2(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    ChannelNorm { x: usize, gamma: usize, beta: usize },
    ChannelAffine { x: usize, scale: usize, bias: usize },
    Sum(usize),
    Mean(usize),
    SumSquares(usize),
    Slice { x: usize, axis: usize, start: usize, len: usize },
    Concat { xs: Vec<usize>, axis: usize },
    Reshape(usize),
    Squeeze2(usize),
    Unsqueeze2(usize),
    PermuteChannels { x: usize, perm: Rc<Vec<usize>> },
    Fft2(usize),
    Ifft2(usize),
    Magnitude(usize),
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Records a single forward computation.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A tensor on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { shape, data, requires_grad, op });
        Var { tape: self.clone(), id }
    }

    /// A differentiable input tensor.
    pub fn leaf(&self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Var {
        assert_eq!(
            numel(shape),
            data.len(),
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(shape.to_vec(), data, requires_grad, Op::Leaf)
    }

    /// A constant tensor (no gradient ever flows into it).
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Var {
        self.leaf(shape, data, false)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].requires_grad)
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].data.len()
    }

    /// Clones the current value out of the tape.
    pub fn value(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].data.clone()
    }

    /// Reads the value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].data)
    }

    /// Value of a one-element tensor.
    pub fn scalar(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let data = &inner.nodes[self.id].data;
        assert_eq!(data.len(), 1, "scalar() on a tensor of {} elements", data.len());
        data[0]
    }

    fn same_tape(&self, other: &Var) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "operands belong to different tapes"
        );
    }

    /// Reverse-mode sweep from this scalar.
    ///
    /// Returns the accumulated gradients, or an error if this tensor is not
    /// a scalar or any gradient came out non-finite.
    pub fn backward(&self) -> Result<Gradients> {
        let inner = self.tape.inner.borrow();
        let nodes = &inner.nodes;
        if nodes[self.id].data.len() != 1 {
            return Err(Error::Config(format!(
                "backward requires a scalar loss, got {} elements",
                nodes[self.id].data.len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            ops::backward_step(nodes, id, &g, &mut grads);
            // Keep gradients only for leaves; interior cotangents are
            // finished once their node has been visited.
            if matches!(nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of node {id} contains NaN or Inf"
                    )));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient buffers produced by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, if any flowed into it.
    pub fn wrt(&self, v: &Var) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`, all-zeros if `v` did not participate.
    pub fn or_zeros(&self, v: &Var) -> Vec<f64> {
        match self.wrt(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; v.numel()],
        }
    }
}

// Elementwise and structural operations. Shape contracts are asserted.
impl Var {
    pub fn add(&self, other: &Var) -> Var {
        self.same_tape(other);
        ops::binary_elementwise(self, other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.same_tape(other);
        ops::binary_elementwise(self, other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.same_tape(other);
        ops::binary_elementwise(self, other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn neg(&self) -> Var {
        ops::unary_elementwise(self, Op::Neg(self.id), |a| -a)
    }

    /// Scalar times tensor (the only broadcasting in the engine).
    pub fn scale(&self, k: f64) -> Var {
        ops::unary_elementwise(self, Op::Scale(self.id, k), |a| k * a)
    }

    /// Elementwise product with a constant array of identical shape.
    pub fn mul_const(&self, mask: Rc<Vec<f64>>) -> Var {
        assert_eq!(self.numel(), mask.len(), "mul_const: mask length mismatch");
        let op = Op::MulConst(self.id, mask.clone());
        let requires = self.tape.requires(&[self.id]);
        let (shape, data) = self.with_value(|x| {
            (self.shape(), x.iter().zip(mask.iter()).map(|(a, b)| a * b).collect())
        });
        self.tape.push(shape, data, requires, op)
    }

    pub fn relu(&self) -> Var {
        ops::unary_elementwise(self, Op::Relu(self.id), |a| a.max(0.0))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        ops::unary_elementwise(self, Op::LeakyRelu(self.id, slope), move |a| {
            if a > 0.0 {
                a
            } else {
                slope * a
            }
        })
    }

    pub fn sigmoid(&self) -> Var {
        ops::unary_elementwise(self, Op::Sigmoid(self.id), |a| 1.0 / (1.0 + (-a).exp()))
    }

    pub fn tanh(&self) -> Var {
        ops::unary_elementwise(self, Op::Tanh(self.id), |a| a.tanh())
    }

    pub fn exp(&self) -> Var {
        ops::unary_elementwise(self, Op::Exp(self.id), |a| a.exp())
    }

    pub fn log(&self) -> Var {
        ops::unary_elementwise(self, Op::Log(self.id), |a| a.ln())
    }

    pub fn sum(&self) -> Var {
        let v = self.with_value(crate::field::fft::pairwise_sum);
        let requires = self.tape.requires(&[self.id]);
        self.tape.push(vec![1], vec![v], requires, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var {
        let n = self.numel() as f64;
        let v = self.with_value(crate::field::fft::pairwise_sum) / n;
        let requires = self.tape.requires(&[self.id]);
        self.tape.push(vec![1], vec![v], requires, Op::Mean(self.id))
    }

    /// `sum(x^2)` as a single node.
    pub fn sum_squares(&self) -> Var {
        let v = self.with_value(|x| {
            let sq: Vec<f64> = x.iter().map(|a| a * a).collect();
            crate::field::fft::pairwise_sum(&sq)
        });
        let requires = self.tape.requires(&[self.id]);
        self.tape.push(vec![1], vec![v], requires, Op::SumSquares(self.id))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.same_tape(other);
        ops::matmul(self, other)
    }

    /// 2-D convolution, stride 1, same (zero) padding, odd kernel.
    /// `self` is `(C_in, H, W)`, `weight` is `(C_out, C_in, kh, kw)`,
    /// `bias` is `(C_out)`.
    pub fn conv2d(&self, weight: &Var, bias: &Var) -> Var {
        self.same_tape(weight);
        self.same_tape(bias);
        ops::conv2d(self, weight, bias)
    }

    /// Nearest-neighbor x2 upsampling of a `(C, H, W)` tensor.
    pub fn upsample2(&self) -> Var {
        ops::upsample2(self)
    }

    /// Normalizes each channel of a `(C, H, W)` tensor to mean 0 and
    /// variance 1 (epsilon 1e-6), then applies the learnable per-channel
    /// affine `gamma`, `beta` (both `(C)`).
    pub fn channel_norm(&self, gamma: &Var, beta: &Var) -> Var {
        self.same_tape(gamma);
        self.same_tape(beta);
        ops::channel_norm(self, gamma, beta)
    }

    /// Per-channel affine `y[c] = x[c] * scale[c] + bias[c]` of a
    /// `(C, H, W)` tensor; `scale`, `bias` are `(C)` tensors.
    pub fn channel_affine(&self, scale: &Var, bias: &Var) -> Var {
        self.same_tape(scale);
        self.same_tape(bias);
        ops::channel_affine(self, scale, bias)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Var {
        ops::slice(self, axis, start, len)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        assert_eq!(self.numel(), numel(shape), "reshape cannot change element count");
        let requires = self.tape.requires(&[self.id]);
        let data = self.value();
        self.tape.push(shape.to_vec(), data, requires, Op::Reshape(self.id))
    }

    /// Space-to-channel: `(C, H, W)` to `(4C, H/2, W/2)`.
    pub fn squeeze2(&self) -> Var {
        ops::squeeze2(self)
    }

    /// Channel-to-space, exact inverse of [`Var::squeeze2`].
    pub fn unsqueeze2(&self) -> Var {
        ops::unsqueeze2(self)
    }

    /// Reorders the channels of a `(C, H, W)` tensor: `y[c] = x[perm[c]]`.
    pub fn permute_channels(&self, perm: Rc<Vec<usize>>) -> Var {
        ops::permute_channels(self, perm)
    }
}

/// Concatenates tensors along `axis`. All other dimensions must agree.
pub fn concat(parts: &[&Var], axis: usize) -> Var {
    assert!(!parts.is_empty(), "concat of zero tensors");
    for p in parts {
        parts[0].same_tape(p);
    }
    ops::concat(parts, axis)
}

impl std::ops::Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl std::ops::Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl std::ops::Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}

#[cfg(test)]
mod tests;
