//! Parameter-free attention gates applied to convolutional feature maps.
//!
//! The log gate multiplies each activation by the log of its rectified value
//! shifted by one: `y = x * ln(relu(x) + 1)`. Negative activations are zeroed,
//! activations below `e - 1` are attenuated, `e - 1` is a fixed point, and
//! larger activations are amplified.
//!
//! Two gradient formulas are provided. [`GradientConvention::Analytic`] is the
//! true derivative of the forward and is what training uses.
//! [`GradientConvention::ReciprocalVariant`] is the alternative closed form
//! `ln(f + 1) + 1/(f + 1)` (and `1` for negative `f`) that circulates for this
//! layer. It is not the derivative of the forward and exists only so the gap
//! can be measured, see [`discrepancy_report`].

use alloc::vec::Vec;
use core::f64::consts::LN_10;
use num_traits::Float;

use thiserror::Error;

use crate::tensor::{sigmoid, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionKind {
    LogAttention,
    SigmoidGate,
    SoftmaxGate,
    Identity,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [
        AttentionKind::LogAttention,
        AttentionKind::SigmoidGate,
        AttentionKind::SoftmaxGate,
        AttentionKind::Identity,
    ];

    /// Short name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::LogAttention => "log",
            AttentionKind::SigmoidGate => "sigmoid",
            AttentionKind::SoftmaxGate => "softmax",
            AttentionKind::Identity => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientConvention {
    /// Derivative of the forward: `ln(f+1) + f/(f+1)` for `f > 0`, else `0`.
    #[default]
    Analytic,
    /// `ln(f+1) + 1/(f+1)` for `f >= 0`, else `1`. Diagnostics only.
    ReciprocalVariant,
}

/// Base of the logarithm inside the log gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    fn scale(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Ten => 1.0 / LN_10,
        }
    }
}

/// Base used by [`log_attention_forward`] and by the detector.
pub const DEFAULT_LOG_BASE: LogBase = LogBase::Natural;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("non-finite input at element {index}")]
    NonFinite { index: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("discrepancy report needs lo < hi and at least two samples")]
    BadRange,
}

fn check_finite<T: Scalar>(f: &Tensor<T>) -> Result<(), AttentionError> {
    match f.first_non_finite() {
        Some(index) => Err(AttentionError::NonFinite { index }),
        None => Ok(()),
    }
}

#[inline]
fn log_gate<T: Scalar>(x: T, scale: T) -> T {
    if x > T::zero() {
        x * x.ln_1p() * scale
    } else {
        T::zero()
    }
}

/// `x * ln(relu(x) + 1)` elementwise, natural log.
pub fn log_attention_forward<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    log_attention_forward_with_base(f, DEFAULT_LOG_BASE)
}

pub fn log_attention_forward_with_base<T: Scalar>(f: &Tensor<T>, base: LogBase) -> Result<Tensor<T>, AttentionError> {
    check_finite(f)?;
    let scale = T::of(base.scale());
    Ok(f.map(|x| log_gate(x, scale)))
}

/// Per-element derivative factor of the log gate under `convention`.
#[inline]
pub fn log_attention_derivative(f: f64, convention: GradientConvention) -> f64 {
    match convention {
        GradientConvention::Analytic => {
            if f > 0.0 {
                Float::ln_1p(f) + f / (f + 1.0)
            } else {
                0.0
            }
        }
        GradientConvention::ReciprocalVariant => {
            if f >= 0.0 {
                Float::ln_1p(f) + 1.0 / (f + 1.0)
            } else {
                1.0
            }
        }
    }
}

pub fn log_attention_backward<T: Scalar>(
    f: &Tensor<T>,
    upstream: &Tensor<T>,
    convention: GradientConvention,
) -> Result<Tensor<T>, AttentionError> {
    log_attention_backward_with_base(f, upstream, convention, DEFAULT_LOG_BASE)
}

pub fn log_attention_backward_with_base<T: Scalar>(
    f: &Tensor<T>,
    upstream: &Tensor<T>,
    convention: GradientConvention,
    base: LogBase,
) -> Result<Tensor<T>, AttentionError> {
    let scale = base.scale();
    Ok(f.zip_map(upstream, "log_attention_backward", |x, g| {
        g * T::of(log_attention_derivative(x.as_f64(), convention) * scale)
    })?)
}

/// `x * sigmoid(x)` elementwise.
pub fn sigmoid_gate<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    check_finite(f)?;
    Ok(f.map(|x| x * sigmoid(x)))
}

pub fn sigmoid_gate_backward<T: Scalar>(f: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    Ok(f.zip_map(upstream, "sigmoid_gate_backward", |x, g| {
        let s = sigmoid(x);
        g * (s + x * s * (T::one() - s))
    })?)
}

/// Softmax over the channel axis of a `[C, H, W]` tensor, per pixel.
pub fn channel_softmax<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    let (c, h, w) = f.chw("channel_softmax")?;
    let plane = h * w;
    let x = f.data();
    let mut out = f.clone();
    let o = out.data_mut();
    for p in 0..plane {
        let m = (0..c).map(|ch| x[ch * plane + p]).fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for ch in 0..c {
            let e = (x[ch * plane + p] - m).exp();
            o[ch * plane + p] = e;
            z = z + e;
        }
        for ch in 0..c {
            o[ch * plane + p] = o[ch * plane + p] / z;
        }
    }
    Ok(out)
}

/// `f` multiplied elementwise by its channel softmax.
pub fn softmax_gate<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    check_finite(f)?;
    let s = channel_softmax(f)?;
    Ok(f.zip_map(&s, "softmax_gate", |x, g| x * g)?)
}

pub fn softmax_gate_backward<T: Scalar>(f: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    let (c, h, w) = f.chw("softmax_gate_backward")?;
    if upstream.shape() != f.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_gate_backward",
            left: f.shape().to_vec(),
            right: upstream.shape().to_vec(),
        }
        .into());
    }
    let s = channel_softmax(f)?;
    let (x, g, sv) = (f.data(), upstream.data(), s.data());
    let plane = h * w;
    let mut out = f.clone();
    let o = out.data_mut();
    // dL/df_k = g_k s_k + s_k (g_k f_k - sum_c g_c f_c s_c)
    for p in 0..plane {
        let mut dot = T::zero();
        for ch in 0..c {
            let i = ch * plane + p;
            dot = dot + g[i] * x[i] * sv[i];
        }
        for ch in 0..c {
            let i = ch * plane + p;
            o[i] = g[i] * sv[i] + sv[i] * (g[i] * x[i] - dot);
        }
    }
    Ok(out)
}

/// Applies the gate selected by `kind`.
pub fn apply_gate<T: Scalar>(kind: AttentionKind, f: &Tensor<T>) -> Result<Tensor<T>, AttentionError> {
    match kind {
        AttentionKind::LogAttention => log_attention_forward(f),
        AttentionKind::SigmoidGate => sigmoid_gate(f),
        AttentionKind::SoftmaxGate => softmax_gate(f),
        AttentionKind::Identity => Ok(f.clone()),
    }
}

/// Backward of [`apply_gate`]. The log gate always uses the analytic gradient.
pub fn gate_backward<T: Scalar>(
    kind: AttentionKind,
    f: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>, AttentionError> {
    match kind {
        AttentionKind::LogAttention => log_attention_backward(f, upstream, GradientConvention::Analytic),
        AttentionKind::SigmoidGate => sigmoid_gate_backward(f, upstream),
        AttentionKind::SoftmaxGate => softmax_gate_backward(f, upstream),
        AttentionKind::Identity => {
            if f.shape() != upstream.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "identity_backward",
                    left: f.shape().to_vec(),
                    right: upstream.shape().to_vec(),
                }
                .into());
            }
            Ok(upstream.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyRow {
    pub f: f64,
    pub analytic: f64,
    pub reciprocal_variant: f64,
    pub abs_diff: f64,
}

/// Both gradient formulas on an evenly spaced grid over `[lo, hi]` (endpoints included).
///
/// For `f >= 0` the difference is `|f - 1| / (f + 1)`: zero at `f = 1`, `2/3` at
/// `f = 5`, and `1` at `f = 0` where the analytic gradient vanishes.
pub fn discrepancy_report(lo: f64, hi: f64, samples: usize) -> Result<Vec<DiscrepancyRow>, AttentionError> {
    if lo >= hi || samples < 2 || !lo.is_finite() || !hi.is_finite() {
        return Err(AttentionError::BadRange);
    }
    let step = (hi - lo) / (samples - 1) as f64;
    Ok((0..samples)
        .map(|i| {
            let f = if i == samples - 1 { hi } else { lo + step * i as f64 };
            discrepancy_at(f)
        })
        .collect())
}

pub fn discrepancy_at(f: f64) -> DiscrepancyRow {
    let analytic = log_attention_derivative(f, GradientConvention::Analytic);
    let reciprocal_variant = log_attention_derivative(f, GradientConvention::ReciprocalVariant);
    DiscrepancyRow {
        f,
        analytic,
        reciprocal_variant,
        abs_diff: (analytic - reciprocal_variant).abs(),
    }
}
