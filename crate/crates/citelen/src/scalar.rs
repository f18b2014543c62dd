//! Scalar abstraction: every numeric kernel is written against [`Real`]
//! so the same code runs in f32 or f64.

use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the model and metrics code.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 for constants and literals.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize fits scalar")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar fits f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Nearest-integer rounding, halves away from zero is not wanted here:
/// the toolkit rounds half **up** (10.5 -> 11, -0.5 -> 0).
pub fn round_half_up<R: Real>(v: R) -> i64 {
    (v + R::from_f64_c(0.5)).floor().to_i64().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_up_is_half_up() {
        assert_eq!(round_half_up(10.5f64), 11);
        assert_eq!(round_half_up(10.4f64), 10);
        assert_eq!(round_half_up(-0.5f64), 0);
        assert_eq!(round_half_up(-0.6f64), -1);
        assert_eq!(round_half_up(19.6f64), 20);
    }
}
