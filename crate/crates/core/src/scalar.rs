//! Floating-point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used throughout the crate: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
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
    /// Lossy conversion from `f64`; exact for `f64` itself.
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

macro_rules! impl_scalar {
    ($f:ty) => {
        impl Scalar for $f {
            #[inline]
            fn of(v: f64) -> Self {
                v as $f
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    fn halve<T: Scalar>(x: T) -> T {
        x / T::of(2.0)
    }

    #[test]
    fn both_widths_work() {
        assert_eq!(halve(3.0f64), 1.5);
        assert_eq!(halve(3.0f32), 1.5);
        assert_eq!(f32::of_usize(7).to_f64_lossy(), 7.0);
    }
}
