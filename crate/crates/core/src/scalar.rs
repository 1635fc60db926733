//! Floating-point element type shared by the networks, losses and the oracle.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an f64 literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Floor applied inside every logarithm of a probability.
pub const LOG_CLAMP: f64 = 1e-7;

/// `ln(max(p, LOG_CLAMP))`.
#[inline]
pub fn clamped_ln<T: Scalar>(p: T) -> T {
    // `max` would swallow NaN and hide a diverged network
    if p.is_nan() {
        return p;
    }
    p.max(T::lit(LOG_CLAMP)).ln()
}

/// Log-sum-exp over a slice; `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar>(xs: impl IntoIterator<Item = T> + Clone) -> T {
    let max = xs.clone().into_iter().fold(T::neg_infinity(), T::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<T>().ln()
}
