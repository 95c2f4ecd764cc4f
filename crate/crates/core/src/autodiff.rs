//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Operations
//! append nodes and return [`Var`] handles; since a node can only refer to
//! nodes created before it, the tape is acyclic and already topologically
//! ordered, so [`Graph::backward`] is a single reverse sweep.
//!
//! Graphs are meant to live for one forward/backward pass on one thread.
//! Persistent weights live in [`Parameter`]s and enter a graph as leaves.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use thiserror::Error;

use crate::attention::{self, AttentionError, AttentionKind};
use crate::tensor::{self, sigmoid, Elementwise, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter {index} has no gradient")]
    MissingGradient { index: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidHyperparameter(&'static str),
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Elementwise(Elementwise, Var, Option<Var>),
    Abs(Var),
    Conv2d {
        input: Var,
        kernels: Var,
        stride: usize,
        pad: usize,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Gate(AttentionKind, Var),
    Channels {
        input: Var,
        start: usize,
    },
    Sum(Var),
    BceWithLogits {
        logits: Var,
        targets: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked (weights, or inputs under test).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`], if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn gradient(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    /// Nodes that `v` was computed from.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Elementwise(_, a, b) => core::iter::once(*a).chain(*b).collect(),
            Op::Conv2d { input, kernels, .. } => vec![*input, *kernels],
            Op::ChannelBias { input, bias } => vec![*input, *bias],
            Op::Abs(a)
            | Op::MaxPool { input: a, .. }
            | Op::Gate(_, a)
            | Op::Channels { input: a, .. }
            | Op::Sum(a)
            | Op::BceWithLogits { logits: a, .. } => vec![*a],
        }
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let value = tensor::elementwise(kind, self.value(a), b.map(|b| self.value(b)))?;
        let rg = self.rg(a) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Elementwise(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Mul, a, Some(b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Relu, a, None)
    }

    pub fn log1p(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Log1p, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::Sigmoid, a, None)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::ScalarMul(s), a, None)
    }

    pub fn shift(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        self.elementwise(Elementwise::ScalarAdd(s), a, None)
    }

    /// `|a|`, with subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(|x| x.abs());
        let rg = self.rg(a);
        Ok(self.push(value, Op::Abs(a), rg))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let value = tensor::conv2d(self.value(input), self.value(kernels), stride, pad)?;
        let rg = self.rg(input) || self.rg(kernels);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var, AutodiffError> {
        let value = tensor::add_channel_bias(self.value(input), self.value(bias))?;
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(value, Op::ChannelBias { input, bias }, rg))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var, AutodiffError> {
        let pooled = tensor::maxpool2d(self.value(input), window, stride)?;
        let rg = self.rg(input);
        Ok(self.push(
            pooled.output,
            Op::MaxPool {
                input,
                argmax: pooled.argmax,
            },
            rg,
        ))
    }

    /// Attention gate; the log gate differentiates with the analytic convention.
    pub fn gate(&mut self, kind: AttentionKind, input: Var) -> Result<Var, AutodiffError> {
        let value = attention::apply_gate(kind, self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Gate(kind, input), rg))
    }

    /// Channels `start..end` of a `[C, H, W]` node.
    pub fn channels(&mut self, input: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let value = self.value(input).channels(start, end)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Channels { input, start }, rg))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(input);
        self.push(value, Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let n = self.value(input).len() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Per-element binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed as `max(x, 0) - x t + ln(1 + e^-|x|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var, AutodiffError> {
        let value = self.value(logits).zip_map(&targets, "bce_with_logits", |x, t| {
            x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p()
        })?;
        let rg = self.rg(logits);
        Ok(self.push(value, Op::BceWithLogits { logits, targets }, rg))
    }

    /// Clears gradients from a previous backward pass.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) -> Result<(), AutodiffError> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return Ok(());
        }
        node.grad = Some(match node.grad.take() {
            Some(prev) => prev.zip_map(&g, "accumulate", |a, b| a + b)?,
            None => g,
        });
        Ok(())
    }

    /// Populates gradients of `loss` with respect to every node it depends on.
    /// Contributions from multiple consumers of a node are summed.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape });
        }
        self.zero_grad();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(up) = self.nodes[i].grad.clone() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.backward_op(Var(i), &op, &up)?;
        }
        Ok(())
    }

    fn backward_op(&mut self, out: Var, op: &Op<T>, up: &Tensor<T>) -> Result<(), AutodiffError> {
        match *op {
            Op::Leaf => {}
            Op::Elementwise(kind, a, b) => {
                let x = self.value(a).clone();
                match kind {
                    Elementwise::Add => {
                        self.accumulate(a, up.clone())?;
                        self.accumulate(b.unwrap(), up.clone())?;
                    }
                    Elementwise::Sub => {
                        self.accumulate(a, up.clone())?;
                        self.accumulate(b.unwrap(), up.map(|g| -g))?;
                    }
                    Elementwise::Mul => {
                        let b = b.unwrap();
                        let y = self.value(b).clone();
                        if self.rg(a) {
                            self.accumulate(a, up.zip_map(&y, "mul_backward", |g, y| g * y)?)?;
                        }
                        if self.rg(b) {
                            self.accumulate(b, up.zip_map(&x, "mul_backward", |g, x| g * x)?)?;
                        }
                    }
                    Elementwise::Relu => {
                        let g = up.zip_map(&x, "relu_backward", |g, x| if x > T::zero() { g } else { T::zero() })?;
                        self.accumulate(a, g)?;
                    }
                    Elementwise::Log1p => {
                        let g = up.zip_map(&x, "log1p_backward", |g, x| g / (T::one() + x))?;
                        self.accumulate(a, g)?;
                    }
                    Elementwise::Sigmoid => {
                        let y = self.value(out).clone();
                        let g = up.zip_map(&y, "sigmoid_backward", |g, s| g * s * (T::one() - s))?;
                        self.accumulate(a, g)?;
                    }
                    Elementwise::ScalarMul(s) => {
                        let s = T::of(s);
                        self.accumulate(a, up.map(|g| g * s))?;
                    }
                    Elementwise::ScalarAdd(_) => self.accumulate(a, up.clone())?,
                }
            }
            Op::Abs(a) => {
                let g = up.zip_map(self.value(a), "abs_backward", |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(a, g)?;
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
                pad,
            } => {
                let (dx, dk) = tensor::conv2d_backward(self.value(input), self.value(kernels), up, stride, pad)?;
                self.accumulate(input, dx)?;
                self.accumulate(kernels, dk)?;
            }
            Op::ChannelBias { input, bias } => {
                let (c, h, w) = up.chw("channel_bias_backward")?;
                let mut db = vec![T::zero(); c];
                for (i, &g) in up.data().iter().enumerate() {
                    db[i / (h * w)] = db[i / (h * w)] + g;
                }
                self.accumulate(input, up.clone())?;
                self.accumulate(bias, Tensor::new(vec![c], db)?)?;
            }
            Op::MaxPool { input, ref argmax } => {
                let mut dx = Tensor::zeros(self.value(input).shape());
                let d = dx.data_mut();
                for (&src, &g) in argmax.iter().zip(up.data()) {
                    d[src] = d[src] + g;
                }
                self.accumulate(input, dx)?;
            }
            Op::Gate(kind, input) => {
                let g = attention::gate_backward(kind, self.value(input), up)?;
                self.accumulate(input, g)?;
            }
            Op::Channels { input, start } => {
                let mut dx = Tensor::zeros(self.value(input).shape());
                let offset = start * up.shape()[1] * up.shape()[2];
                dx.data_mut()[offset..offset + up.len()].copy_from_slice(up.data());
                self.accumulate(input, dx)?;
            }
            Op::Sum(input) => {
                let g = up.data()[0];
                let shape = self.value(input).shape().to_vec();
                self.accumulate(input, Tensor::full(&shape, g))?;
            }
            Op::BceWithLogits { logits, ref targets } => {
                let x = self.value(logits);
                let mut g = x.zip_map(targets, "bce_backward", |x, t| sigmoid(x) - t)?;
                for (gi, &u) in g.data_mut().iter_mut().zip(up.data()) {
                    *gi = *gi * u;
                }
                self.accumulate(logits, g)?;
            }
        }
        Ok(())
    }
}

/// A persistent trainable tensor with its SGD momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Scalar = f64> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub velocity: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let velocity = Tensor::zeros(value.shape());
        Self {
            value,
            grad: None,
            velocity,
        }
    }

    /// Adds `g` into the pending gradient.
    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<(), AutodiffError> {
        self.grad = Some(match self.grad.take() {
            Some(prev) => prev.zip_map(g, "accumulate_grad", |a, b| a + b)?,
            None => g.clone(),
        });
        Ok(())
    }
}

/// Rescale all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping. Parameters without a gradient
/// are skipped.
pub fn clip_grad_norm<T: Scalar>(params: &mut [Parameter<T>], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum();
    let norm = Float::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let k = T::of(max_norm / norm);
        for g in params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            for v in g.data_mut() {
                *v = *v * k;
            }
        }
    }
    norm
}

/// One SGD step with classical momentum, then clears the gradients:
/// `v <- momentum * v + g`, `p <- p - lr * v`.
///
/// Fails without touching anything if any parameter lacks a gradient.
pub fn sgd_step<T: Scalar>(params: &mut [Parameter<T>], lr: f64, momentum: f64) -> Result<(), AutodiffError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(AutodiffError::InvalidHyperparameter(
            "learning rate must be finite and >= 0",
        ));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(AutodiffError::InvalidHyperparameter("momentum must lie in [0, 1)"));
    }
    if let Some(index) = params.iter().position(|p| p.grad.is_none()) {
        return Err(AutodiffError::MissingGradient { index });
    }
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for p in params.iter_mut() {
        let g = p.grad.take().unwrap();
        for ((v, w), &gi) in p
            .velocity
            .data_mut()
            .iter_mut()
            .zip(p.value.data_mut().iter_mut())
            .zip(g.data())
        {
            *v = mu * *v + gi;
            *w = *w - lr * *v;
        }
    }
    Ok(())
}
