//! Numeric abstraction shared by the graphical-model code.
//!
//! Models, the oracle and both solvers are written against [`Scalar`] so the
//! same code runs on `f32`, `f64` and exact `Rational64` costs. Geometry
//! (pose fitting) is generic over `nalgebra::RealField` instead.

use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::{FromPrimitive, Num, NumAssign, Signed, ToPrimitive};

/// A real-like number usable as an energy, cost or flow capacity.
pub trait Scalar:
    Num + NumAssign + Signed + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Magnitude below which a value is treated as zero when it was produced
    /// by arithmetic on quantities of size `scale`. Exact types return zero.
    fn negligible(scale: Self) -> Self;

    /// Conversion used when building models from `f64` data.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(|| panic!("{value} is not representable"))
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn negligible(scale: Self) -> Self {
        scale.abs().max(1.0) * 1e-12
    }
}

impl Scalar for f32 {
    fn negligible(scale: Self) -> Self {
        scale.abs().max(1.0) * 1e-5
    }
}

impl Scalar for Rational64 {
    fn negligible(_scale: Self) -> Self {
        Rational64::from_integer(0)
    }
}

/// Smaller of two partially ordered values; `a` wins ties.
#[inline]
pub(crate) fn min2<T: PartialOrd>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}
