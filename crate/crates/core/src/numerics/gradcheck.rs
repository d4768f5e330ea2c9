//! Central finite-difference gradient checking.
//!
//! Every trained module in this crate ships hand-derived analytic gradients;
//! this is the oracle they are verified against.

use crate::error::{Error, Result};

/// Default step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function: component i is
/// (f(x + h e_i) - f(x - h e_i)) / (2h).
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite function value while probing coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error between two gradient vectors:
/// ||a - b|| / max(||a||, ||b||, 1e-300).
pub fn grad_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in analytic.iter().zip(numeric.iter()) {
        diff += (a - b) * (a - b);
        na += a * a;
        nb += b * b;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = finite_diff_grad(|x| Ok(x[0] * x[0]), &[3.0], DEFAULT_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6, "{}", g[0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| Ok(4.2), &[1.0, -2.0, 0.5], DEFAULT_STEP).unwrap();
        for v in g {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn multivariate_polynomial() {
        // f = x0^2 * x1 + sin(x1)
        let f = |x: &[f64]| Ok(x[0] * x[0] * x[1] + x[1].sin());
        let x = [1.5, -0.7];
        let g = finite_diff_grad(f, &x, DEFAULT_STEP).unwrap();
        let expect = [2.0 * x[0] * x[1], x[0] * x[0] + x[1].cos()];
        assert!(grad_relative_error(&expect, &g) < 1e-8);
    }

    #[test]
    fn non_finite_evaluation_propagates() {
        let r = finite_diff_grad(|x| Ok(1.0 / x[0]), &[0.0], DEFAULT_STEP * 0.0 + 1e-5);
        // f(x +/- h) is finite here; force a NaN instead.
        assert!(r.is_ok());
        let r = finite_diff_grad(|_| Ok(f64::NAN), &[1.0], 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn bad_step_rejected() {
        assert!(finite_diff_grad(|x| Ok(x[0]), &[0.0], 0.0).is_err());
        assert!(finite_diff_grad(|x| Ok(x[0]), &[0.0], -1.0).is_err());
    }
}
