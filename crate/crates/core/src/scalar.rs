//! The scalar type abstraction.
//!
//! All numeric code in this crate is generic over [`Scalar`], a float
//! type with the arithmetic, conversion and formatting bounds the
//! tensor and training machinery needs. `f64` is the default and the
//! only precision the shipped tolerances are calibrated for; `f32`
//! works but loosens every gradient-check bound.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of tensors, parameter vectors and losses.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG draws.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable in scalar type")
    }

    /// Widening conversion used by the on-disk formats, which are always f64.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sums `values` by recursive pairwise reduction.
///
/// The reduction order depends only on the slice length, so two slices
/// with equal contents sum to bit-identical results.
pub fn pairwise_sum<S: Scalar>(values: &[S]) -> S {
    const BASE: usize = 8;
    if values.len() <= BASE {
        let mut acc = S::zero();
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
