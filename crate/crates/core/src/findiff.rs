//! Central finite differences: the independent oracle used to verify
//! reverse-mode gradients and exact Jacobians.

use crate::tensor::TensorValue;
use thiserror::Error;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FiniteDiffError {
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("function produced a non-finite output at probe {0}")]
    NonFinite(usize),
    #[error("function output length changed between probes ({0} vs {1})")]
    InconsistentOutput(usize, usize),
}

/// Jacobian of a vector function by central differences.
///
/// Entry `(k, i)` is `(f_k(x + h·e_i) − f_k(x − h·e_i)) / 2h`; the result has
/// shape `[out_dim, in_dim]`.
pub fn finite_difference_jacobian<F>(
    mut f: F,
    x: &TensorValue,
    h: f64,
) -> Result<TensorValue, FiniteDiffError>
where
    F: FnMut(&TensorValue) -> Vec<f64>,
{
    if h <= 0.0 {
        return Err(FiniteDiffError::BadStep(h));
    }
    let in_dim = x.numel();
    let mut probe = x.clone();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut out_dim = 0usize;
    for i in 0..in_dim {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(FiniteDiffError::NonFinite(i));
        }
        if plus.len() != minus.len() {
            return Err(FiniteDiffError::InconsistentOutput(plus.len(), minus.len()));
        }
        if i == 0 {
            out_dim = plus.len();
            rows = vec![vec![0.0; in_dim]; out_dim];
        } else if plus.len() != out_dim {
            return Err(FiniteDiffError::InconsistentOutput(plus.len(), out_dim));
        }
        for k in 0..out_dim {
            rows[k][i] = (plus[k] - minus[k]) / (2.0 * h);
        }
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(TensorValue::new(vec![out_dim, in_dim], flat).expect("jacobian shape"))
}

/// Gradient of a scalar function by central differences.
pub fn finite_difference_gradient<F>(
    mut f: F,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, FiniteDiffError>
where
    F: FnMut(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(FiniteDiffError::BadStep(h));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(FiniteDiffError::NonFinite(i));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Scale-aware relative error used by every gradient check: the difference is
/// measured against the larger magnitude, floored so near-zero derivatives are
/// compared absolutely on the same tolerance.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Largest [`relative_error`] over two equal-length gradient slices.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_constant_jacobian() {
        // f(x) = 3x, scalar
        let x = TensorValue::vector(vec![0.7]);
        let jac = finite_difference_jacobian(|t| vec![3.0 * t.data()[0]], &x, 1e-5).unwrap();
        assert_eq!(jac.shape(), &[1, 1]);
        assert!((jac.data()[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn componentwise_square_has_diagonal_jacobian() {
        // f(x) = (x₁², x₂²) at (1, 2) → diag(2, 4)
        let x = TensorValue::vector(vec![1.0, 2.0]);
        let jac = finite_difference_jacobian(
            |t| t.data().iter().map(|v| v * v).collect(),
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(jac.shape(), &[2, 2]);
        let expect = [2.0, 0.0, 0.0, 4.0];
        for (a, e) in jac.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-6, "jacobian {:?}", jac.data());
        }
    }

    #[test]
    fn nonpositive_step_rejected() {
        let x = TensorValue::vector(vec![1.0]);
        assert!(matches!(
            finite_difference_jacobian(|t| t.data().to_vec(), &x, 0.0),
            Err(FiniteDiffError::BadStep(_))
        ));
    }

    #[test]
    fn non_finite_output_rejected() {
        let x = TensorValue::vector(vec![1.0]);
        assert!(matches!(
            finite_difference_jacobian(|_| vec![f64::NAN], &x, 1e-6),
            Err(FiniteDiffError::NonFinite(_))
        ));
    }
}
