//! Dense row-major tensors and the raw (non-differentiable) kernels behind them.
//!
//! Layout is NCHW without the batch axis: images and feature maps are
//! `[channels, height, width]`, convolution kernels `[out, in, kh, kw]`.
//! There is no broadcasting; binary ops require equal shapes.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

/// Element type of a [`Tensor`]. Implemented for `f64` (the default, used by all
/// correctness checks) and `f32` (allowed for training).
pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Backend of [`gemm`]; callers go through that bounds-checked wrapper.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        dims: (usize, usize, usize),
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

macro_rules! gemm_impl {
    ($f:path) => {
        #[inline]
        fn gemm_raw(
            (m, k, n): (usize, usize, usize),
            a: &[Self],
            (rsa, csa): (usize, usize),
            b: &[Self],
            (rsb, csb): (usize, usize),
            beta: Self,
            c: &mut [Self],
            (rsc, csc): (usize, usize),
        ) {
            // SAFETY: `gemm` checked that every strided index of a, b and c is
            // inside its slice, and c does not alias a or b (it is `&mut`).
            unsafe {
                $f(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    rsa as isize,
                    csa as isize,
                    b.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    beta,
                    c.as_mut_ptr(),
                    rsc as isize,
                    csc as isize,
                )
            }
        }
    };
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    gemm_impl!(matrixmultiply::dgemm);
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    gemm_impl!(matrixmultiply::sgemm);
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("log1p undefined at element {index} (value {value} <= -1)")]
    Log1pDomain { index: usize, value: f64 },
    #[error("{op}: window {window}x{window} larger than padded input {height}x{width}")]
    WindowTooLarge {
        op: &'static str,
        window: usize,
        height: usize,
        width: usize,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: &'static str },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("element count {len} does not match shape {shape:?}")]
    ElementCount { shape: Vec<usize>, len: usize },
}

/// Elementwise operations. Binary kinds take a second tensor of identical shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    /// Natural log of `x + 1`, defined for `x > -1`.
    Log1p,
    Sigmoid,
    ScalarMul(f64),
    ScalarAdd(f64),
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(TensorError::ElementCount { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Same data viewed with a different shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<(), TensorError> {
        match self.first_non_finite() {
            Some(index) => Err(TensorError::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// `[C, H, W]` dimensions, or an error naming `op`.
    pub fn chw(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: T) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    /// Channels `start..end` of a `[C, H, W]` tensor.
    pub fn channels(&self, start: usize, end: usize) -> Result<Self, TensorError> {
        let (c, h, w) = self.chw("channels")?;
        if start >= end || end > c {
            return Err(TensorError::InvalidArgument {
                op: "channels",
                reason: "channel range out of bounds",
            });
        }
        Ok(Self {
            shape: vec![end - start, h, w],
            data: self.data[start * h * w..end * h * w].to_vec(),
        })
    }

    fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    // Two branches keep exp() from overflowing for large |x|.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Applies an elementwise operation. `b` must be given exactly for binary kinds.
pub fn elementwise<T: Scalar>(
    kind: Elementwise,
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    match (kind.is_binary(), b) {
        (true, None) => {
            return Err(TensorError::InvalidArgument {
                op: "elementwise",
                reason: "binary op needs a second operand",
            })
        }
        (false, Some(_)) => {
            return Err(TensorError::InvalidArgument {
                op: "elementwise",
                reason: "unary op given a second operand",
            })
        }
        _ => {}
    }
    match kind {
        Elementwise::Add => a.zip_map(b.unwrap(), "add", |x, y| x + y),
        Elementwise::Sub => a.zip_map(b.unwrap(), "sub", |x, y| x - y),
        Elementwise::Mul => a.zip_map(b.unwrap(), "mul", |x, y| x * y),
        Elementwise::Relu => Ok(a.map(|x| if x > T::zero() { x } else { T::zero() })),
        Elementwise::Log1p => {
            if let Some(index) = a.data.iter().position(|&x| x <= -T::one()) {
                return Err(TensorError::Log1pDomain {
                    index,
                    value: a.data[index].as_f64(),
                });
            }
            Ok(a.map(|x| x.ln_1p()))
        }
        Elementwise::Sigmoid => Ok(a.map(sigmoid)),
        Elementwise::ScalarMul(s) => Ok(a.map(|x| x * T::of(s))),
        Elementwise::ScalarAdd(s) => Ok(a.map(|x| x + T::of(s))),
    }
}

/// Geometry shared by the convolution forward and backward kernels.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry, TensorError> {
    let (in_c, in_h, in_w) = input.chw("conv2d")?;
    let [out_c, k_in, kh, kw] = *kernels.shape() else {
        return Err(TensorError::Rank {
            op: "conv2d",
            expected: 4,
            shape: kernels.shape().to_vec(),
        });
    };
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            reason: "stride must be at least 1",
        });
    }
    if k_in != in_c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernels.shape().to_vec(),
        });
    }
    if kh > in_h + 2 * pad || kw > in_w + 2 * pad {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernels.shape().to_vec(),
        });
    }
    Ok(ConvGeometry {
        in_c,
        in_h,
        in_w,
        out_c,
        kh,
        kw,
        out_h: (in_h + 2 * pad - kh) / stride + 1,
        out_w: (in_w + 2 * pad - kw) / stride + 1,
        stride,
        pad,
    })
}

/// Output columns `ox` for which `ox * stride + kx - pad` lands inside `[0, in_w)`.
fn valid_cols(g: &ConvGeometry, kx: usize) -> core::ops::Range<usize> {
    let lo = if g.pad > kx { (g.pad - kx).div_ceil(g.stride) } else { 0 };
    let hi = (g.in_w + g.pad).saturating_sub(kx).div_ceil(g.stride).min(g.out_w);
    lo..hi.max(lo)
}

/// Matrix product `c = a * b + beta * c` on strided views, `a: [m,k]`,
/// `b: [k,n]`, `c: [m,n]`. Strides are (row, column) in elements.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    (m, k, n): (usize, usize, usize),
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows.max(1) - 1) * rs + (cols.max(1) - 1) * cs;
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > last(m, n, rsc, csc), "gemm: c too short");
    if k > 0 {
        assert!(a.len() > last(m, k, rsa, csa), "gemm: a too short");
        assert!(b.len() > last(k, n, rsb, csb), "gemm: b too short");
    }
    T::gemm_raw((m, k, n), a, (rsa, csa), b, (rsb, csb), beta, c, (rsc, csc));
}

/// Unfold `input` so that row `(ic*kh + ky)*kw + kx`, column `oy*out_w + ox`
/// holds the input pixel that kernel tap sees at that output position (zero
/// where it falls into the padding).
fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let p = g.out_h * g.out_w;
    let mut cols = vec![T::zero(); g.in_c * g.kh * g.kw * p];
    for ic in 0..g.in_c {
        let plane = &x[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ic * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                let valid = valid_cols(g, kx);
                if valid.is_empty() {
                    continue;
                }
                let first = valid.start * g.stride + kx - g.pad;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let row = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let out = &mut dst[oy * g.out_w + valid.start..oy * g.out_w + valid.end];
                    if g.stride == 1 {
                        out.copy_from_slice(&row[first..first + out.len()]);
                    } else {
                        for (j, o) in out.iter_mut().enumerate() {
                            *o = row[first + j * g.stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let p = g.out_h * g.out_w;
    let mut dx = vec![T::zero(); g.in_c * g.in_h * g.in_w];
    for ic in 0..g.in_c {
        let plane = &mut dx[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ic * g.kh + ky) * g.kw + kx;
                let src = &cols[r * p..(r + 1) * p];
                let valid = valid_cols(g, kx);
                if valid.is_empty() {
                    continue;
                }
                let first = valid.start * g.stride + kx - g.pad;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let row = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let vals = &src[oy * g.out_w + valid.start..oy * g.out_w + valid.end];
                    if g.stride == 1 {
                        for (d, &v) in row[first..first + vals.len()].iter_mut().zip(vals) {
                            *d = *d + v;
                        }
                    } else {
                        for (j, &v) in vals.iter().enumerate() {
                            let d = &mut row[first + j * g.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2-D cross-correlation with zero padding: `[C,H,W] * [K,C,kh,kw] -> [K,H',W']`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = conv_geometry(input, kernels, stride, pad)?;
    let p = g.out_h * g.out_w;
    let r = g.in_c * g.kh * g.kw;
    let mut out = vec![T::zero(); g.out_c * p];
    let direct = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
    let cols;
    let b = if direct {
        input.data()
    } else {
        cols = im2col(input.data(), &g);
        &cols
    };
    gemm(
        (g.out_c, r, p),
        kernels.data(),
        (r, 1),
        b,
        (p, 1),
        T::zero(),
        &mut out,
        (p, 1),
    );
    Tensor::new(vec![g.out_c, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d`] with respect to its input and kernels.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let g = conv_geometry(input, kernels, stride, pad)?;
    if upstream.shape() != [g.out_c, g.out_h, g.out_w] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            left: upstream.shape().to_vec(),
            right: vec![g.out_c, g.out_h, g.out_w],
        });
    }
    let p = g.out_h * g.out_w;
    let r = g.in_c * g.kh * g.kw;
    let up = upstream.data();
    let direct = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
    let cols;
    let x_cols = if direct {
        input.data()
    } else {
        cols = im2col(input.data(), &g);
        &cols
    };
    // dK = up * cols^T
    let mut dk = vec![T::zero(); kernels.len()];
    gemm((g.out_c, p, r), up, (p, 1), x_cols, (1, p), T::zero(), &mut dk, (r, 1));
    // dcols = K^T * up
    let mut dcols = vec![T::zero(); r * p];
    gemm(
        (r, g.out_c, p),
        kernels.data(),
        (1, r),
        up,
        (p, 1),
        T::zero(),
        &mut dcols,
        (p, 1),
    );
    let dx = if direct { dcols } else { col2im(&dcols, &g) };
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernels.shape().to_vec(), dk)?,
    ))
}

/// Result of [`maxpool2d`]: the pooled tensor plus, per output element, the flat
/// input index that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Max pooling per channel without padding. Ties resolve to the first index in
/// row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Pooled<T>, TensorError> {
    let (c, h, w) = input.chw("maxpool2d")?;
    if window == 0 || stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "maxpool2d",
            reason: "window and stride must be at least 1",
        });
    }
    if window > h || window > w {
        return Err(TensorError::WindowTooLarge {
            op: "maxpool2d",
            window,
            height: h,
            width: w,
        });
    }
    let out_h = (h - window) / stride + 1;
    let out_w = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut argmax = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = (ch * h + oy * stride) * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![c, out_h, out_w], out)?,
        argmax,
    })
}

/// Adds `bias[k]` to every element of channel `k`.
pub fn add_channel_bias<T: Scalar>(input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (c, h, w) = input.chw("add_channel_bias")?;
    if bias.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "add_channel_bias",
            left: input.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = *v + bias.data()[i / plane];
    }
    Ok(out)
}
