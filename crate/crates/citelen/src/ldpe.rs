//! Length-difference positional encoding.
//!
//! The decoder's positional encoding is evaluated at the *remaining*
//! token budget `len - pos` instead of the absolute position, so every
//! decoding step sees how many tokens it has left. `len` may be any real
//! number: during training a predicted length flows in unrounded so the
//! generation loss can push gradient back into the length regressor.

use crate::math::Matrix;
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LdpeError {
    #[error("model dimension must be even, got {0}")]
    OddDimension(usize),
    #[error("max_pos must be >= 1")]
    EmptyMatrix,
}

#[inline]
fn inv_wavelength<R: Real>(pair: usize, d: usize) -> R {
    // 1 / 10000^(2i/d) for dimension pair i.
    let exponent = R::from_usize_c(2 * pair) / R::from_usize_c(d);
    R::from_f64_c(10000.0).powf(exponent).recip()
}

/// Entry `k` of the encoding at decoder position `pos` under budget `len`.
///
/// Even `k = 2i` gives `sin((len - pos) / 10000^(2i/d))`, odd `k = 2i + 1`
/// the matching cosine. `d` must be even and `k < d`.
pub fn ldpe_value<R: Real>(pos: usize, len: R, k: usize, d: usize) -> R {
    debug_assert!(d.is_multiple_of(2) && k < d);
    let remaining = len - R::from_usize_c(pos);
    let angle = remaining * inv_wavelength(k / 2, d);
    if k.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Analytic derivative of [`ldpe_value`] with respect to `len`.
pub fn ldpe_grad_len<R: Real>(pos: usize, len: R, k: usize, d: usize) -> R {
    debug_assert!(d.is_multiple_of(2) && k < d);
    let scale = inv_wavelength::<R>(k / 2, d);
    let angle = (len - R::from_usize_c(pos)) * scale;
    if k.is_multiple_of(2) {
        angle.cos() * scale
    } else {
        -angle.sin() * scale
    }
}

/// Positional-encoding matrix for positions `0..max_pos` under budget `len`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpeMatrix<R> {
    pub values: Matrix<R>,
    pub len: R,
}

pub fn ldpe_matrix<R: Real>(len: R, max_pos: usize, d: usize) -> Result<LdpeMatrix<R>, LdpeError> {
    if !d.is_multiple_of(2) {
        return Err(LdpeError::OddDimension(d));
    }
    if max_pos == 0 {
        return Err(LdpeError::EmptyMatrix);
    }
    let values = Matrix::from_fn(max_pos, d, |pos, k| ldpe_value(pos, len, k, d));
    Ok(LdpeMatrix { values, len })
}

/// Per-entry derivative of [`ldpe_matrix`] with respect to `len`; used to
/// route the generation loss into the length regressor.
pub fn ldpe_matrix_grad_len<R: Real>(len: R, max_pos: usize, d: usize) -> Matrix<R> {
    debug_assert!(d.is_multiple_of(2) && max_pos >= 1);
    Matrix::from_fn(max_pos, d, |pos, k| ldpe_grad_len(pos, len, k, d))
}

/// Standard sinusoidal positional encoding at a signed position.
///
/// Kept as an independent reference implementation (exp/ln form) so the
/// length-difference encoding can be cross-checked against it.
pub fn sinusoidal_pe<R: Real>(pos: i64, d: usize) -> Vec<R> {
    debug_assert!(d.is_multiple_of(2));
    let p = R::from_f64_c(pos as f64);
    let ln_base = R::from_f64_c(10000.0f64.ln());
    let mut out = Vec::with_capacity(d);
    for pair in 0..d / 2 {
        let freq = (-ln_base * R::from_usize_c(2 * pair) / R::from_usize_c(d)).exp();
        let angle = p * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_remaining_budget_row_is_zero_one_pattern() {
        let d = 8;
        for k in 0..d {
            let v = ldpe_value(5, 5.0f64, k, d);
            if k % 2 == 0 {
                assert_eq!(v, 0.0, "k={k}");
            } else {
                assert_eq!(v, 1.0, "k={k}");
            }
        }
    }

    #[test]
    fn scalar_value_matches_hand_evaluation() {
        // pos=0, len=1, k=0, d=4: sin(1 / 10000^0) = sin(1).
        let v = ldpe_value(0, 1.0f64, 0, 4);
        assert!((v - 1.0f64.sin()).abs() < 1e-15);
        assert!((v - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn matrix_shape_and_rows() {
        let m = ldpe_matrix(5.0f64, 3, 8).unwrap();
        assert_eq!(m.values.rows, 3);
        assert_eq!(m.values.cols, 8);
        for pos in 0..3 {
            for k in 0..8 {
                assert_eq!(m.values.get(pos, k), ldpe_value(pos, 5.0, k, 8));
            }
        }
    }

    #[test]
    fn odd_dimension_rejected_at_construction() {
        assert_eq!(
            ldpe_matrix(4.0f64, 3, 7).unwrap_err(),
            LdpeError::OddDimension(7)
        );
    }

    #[test]
    fn len_zero_row_zero_is_sinusoidal_origin() {
        let m = ldpe_matrix(0.0f64, 1, 8).unwrap();
        let pe = sinusoidal_pe::<f64>(0, 8);
        for (k, &want) in pe.iter().enumerate() {
            assert!((m.values.get(0, k) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_equal_sinusoidal_pe_of_remaining_budget() {
        let d = 16;
        let len = 9i64;
        let m = ldpe_matrix(len as f64, 14, d).unwrap();
        for pos in 0..14 {
            let pe = sinusoidal_pe::<f64>(len - pos as i64, d);
            for (k, &want) in pe.iter().enumerate() {
                assert!(
                    (m.values.get(pos, k) - want).abs() < 1e-12,
                    "pos={pos} k={k}"
                );
            }
        }
    }

    #[test]
    fn sinusoidal_pe_basics() {
        let pe = sinusoidal_pe::<f64>(0, 6);
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let pe1 = sinusoidal_pe::<f64>(1, 2);
        assert!((pe1[0] - 1.0f64.sin()).abs() < 1e-15);
        assert!((pe1[1] - 1.0f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn negative_position_matches_overrun_row() {
        // sinusoidal_pe(-3) is the encoding seen when generation overruns
        // the budget by 3 tokens.
        let d = 8;
        let len = 4.0f64;
        let pe = sinusoidal_pe::<f64>(-3, d);
        for (k, &want) in pe.iter().enumerate() {
            assert!((ldpe_value(7, len, k, d) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invariance_in_pos_and_len() {
        let d = 12;
        for c in [1usize, 4, 9] {
            for pos in 0..6 {
                for k in 0..d {
                    let a = ldpe_value(pos, 7.3f64, k, d);
                    let b = ldpe_value(pos + c, 7.3 + c as f64, k, d);
                    assert!((a - b).abs() < 1e-12, "c={c} pos={pos} k={k}");
                }
            }
        }
    }

    #[test]
    fn analytic_len_gradient_matches_central_differences() {
        let d = 8;
        let h = 1e-3;
        for pos in 0..6 {
            for k in 0..d {
                for len in [0.0f64, 2.5, 7.0, 34.0] {
                    let analytic = ldpe_grad_len(pos, len, k, d);
                    let numeric = (ldpe_value(pos, len + h, k, d) - ldpe_value(pos, len - h, k, d))
                        / (2.0 * h);
                    assert!(
                        (analytic - numeric).abs() < 1e-5,
                        "pos={pos} k={k} len={len}: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn works_in_f32_too() {
        let v = ldpe_value(0usize, 1.0f32, 0, 4);
        assert!((v - 1.0f32.sin()).abs() < 1e-6);
    }
}
