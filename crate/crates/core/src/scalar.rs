//! Scalar element types accepted by tensors, models and losses.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type: `f32` for storage-efficient training, `f64`
/// for gradient checking and oracles.
///
/// Reductions widen every element to `f64` before accumulating, so the
/// accumulation precision is the same whichever storage type is chosen.
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short type tag used in diagnostics.
    const NAME: &'static str;

    fn widen(self) -> f64;

    fn narrow(value: f64) -> Self;

    /// Little-endian `f32` encoding used by checkpoint payloads.
    fn to_f32_bits(self) -> [u8; 4] {
        (self.widen() as f32).to_le_bytes()
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value
    }
}

/// Sum of a slice accumulated in `f64`.
pub fn wide_sum<T: Scalar>(values: &[T]) -> f64 {
    values.iter().map(|v| v.widen()).sum()
}

/// Dot product accumulated in `f64`.
pub fn wide_dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.widen() * y.widen()).sum()
}
