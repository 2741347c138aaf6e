//! Scalar abstraction for the numeric kernels.
//!
//! Tensor math is written against [`Scalar`] so the same kernels run in
//! f32 (the storage dtype) and f64 (the accumulation/evaluation dtype).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast, ToPrimitive};

/// Floating-point scalar: f32 or f64.
pub trait Scalar:
    Float
    + NumAssign
    + NumCast
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-or-rounding conversion from f64.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from(v).expect("f64 converts to any Scalar")
    }

    /// Widening conversion to f64 (exact for f32 and f64).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable softmax: shifts by the maximum before exponentiating.
///
/// Empty input yields an empty output. The result sums to 1 up to
/// floating-point rounding and every entry lies in [0, 1].
pub fn softmax_stable<F: Scalar>(logits: &[F]) -> Vec<F> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&g| (g - max).exp()).collect();
    let sum: F = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
