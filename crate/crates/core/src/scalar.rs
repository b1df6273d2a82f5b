//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_f32_lossless(x: f32) -> Self {
        Self::from_f32(x).expect("f32 value representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance for identities that are exact in real arithmetic but
    /// accumulate rounding here (energy forms, Parseval).
    #[inline]
    fn identity_tol() -> Self {
        Self::of(1e-6).max(Self::epsilon().sqrt())
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_tolerance_tracks_precision() {
        assert_eq!(f64::identity_tol(), 1e-6);
        assert!(f32::identity_tol() > 1e-4);
    }
}
