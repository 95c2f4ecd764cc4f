//! Central finite differences, the reference every analytic gradient is checked against.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("objective is not finite at coordinate {index}")]
    NonFinite { index: usize },
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate `i`.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor, GradCheckError>
where
    F: Fn(&Tensor) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GradCheckError::BadStep(eps));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GradCheckError::NonFinite { index: i });
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Floor on the denominator of [`relative_error`] so exact zeros compare cleanly.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR);
    (a - b).abs() / denom
}

/// Largest elementwise [`relative_error`] between two equally shaped tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_relative_error: shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::log_attention_forward;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1.0, 0.5, 7.0]).unwrap();
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-6).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-6).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn log_attention_at_two() {
        // d/dx [x ln(x+1)] at 2 = ln 3 + 2/3 = 1.7652789553347765
        let x = Tensor::<f64>::scalar(2.0);
        let f = |t: &Tensor| log_attention_forward(t).unwrap().sum();
        for eps in [1e-5, 1e-6] {
            let g = finite_diff_grad(f, &x, eps).unwrap().data()[0];
            assert!((g - 1.765_278_955_334_776_5).abs() < 1e-6, "eps {eps}: {g}");
        }
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let x = Tensor::<f64>::scalar(1.0);
        assert_eq!(
            finite_diff_grad(|t| t.sum(), &x, 0.0),
            Err(GradCheckError::BadStep(0.0))
        );
        assert_eq!(
            finite_diff_grad(|t| t.data()[0].ln() * f64::INFINITY, &x, 1e-3),
            Err(GradCheckError::NonFinite { index: 0 })
        );
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
