use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use crate::scalar::Scalar;

/// An energy term: a finite value or the `+∞` sentinel.
///
/// `∞` absorbs addition and compares above every finite value. Subtracting
/// from `∞` is rejected because the result is undefined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cost<T> {
    Finite(T),
    Infinite,
}

/// Attempted `∞ − x` or `x − ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("subtraction involving an infinite cost")]
pub struct InfiniteSubtraction;

impl<T: Scalar> Cost<T> {
    pub fn zero() -> Self {
        Cost::Finite(T::zero())
    }

    pub fn from_f64(value: f64) -> Self {
        if value.is_infinite() && value > 0.0 {
            Cost::Infinite
        } else {
            Cost::Finite(T::from_f64_lossy(value))
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Cost::Infinite)
    }

    /// The finite value, or `None` for `∞`.
    pub fn finite(self) -> Option<T> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    /// Multiplies by a non-negative weight. `∞` stays `∞` for every weight,
    /// including zero: an infinite entry is a hard constraint.
    pub fn scale(self, weight: T) -> Self {
        match self {
            Cost::Finite(v) => Cost::Finite(v * weight),
            Cost::Infinite => Cost::Infinite,
        }
    }

    pub fn checked_sub(self, rhs: Self) -> Result<Self, InfiniteSubtraction> {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Ok(Cost::Finite(a - b)),
            _ => Err(InfiniteSubtraction),
        }
    }

    /// Finite value or `replacement` for `∞`.
    pub fn finite_or(self, replacement: T) -> T {
        self.finite().unwrap_or(replacement)
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Cost::Finite(v) => v.to_f64_lossy(),
            Cost::Infinite => f64::INFINITY,
        }
    }
}

impl<T: Scalar> Add for Cost<T> {
    type Output = Cost<T>;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infinite,
        }
    }
}

impl<T: Scalar> Add<T> for Cost<T> {
    type Output = Cost<T>;

    fn add(self, rhs: T) -> Self {
        self + Cost::Finite(rhs)
    }
}

impl<T: Scalar> PartialOrd for Cost<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Some(Ordering::Less),
            (Cost::Infinite, Cost::Finite(_)) => Some(Ordering::Greater),
            (Cost::Infinite, Cost::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl<T: Scalar> std::iter::Sum for Cost<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Cost::zero(), |acc, c| acc + c)
    }
}

impl<T: Scalar + fmt::Display> fmt::Display for Cost<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => f.write_str("inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Cost<f64>;

    #[test]
    fn infinity_absorbs_addition() {
        assert_eq!(C::Infinite + C::Finite(3.0), C::Infinite);
        assert_eq!(C::Finite(3.0) + C::Infinite, C::Infinite);
        assert_eq!(C::Finite(1.5) + C::Finite(2.0), C::Finite(3.5));
    }

    #[test]
    fn infinity_orders_above_finite() {
        assert!(C::Infinite > C::Finite(1e300));
        assert!(C::Finite(-5.0) < C::Infinite);
        assert_eq!(C::Infinite.partial_cmp(&C::Infinite), Some(Ordering::Equal));
    }

    #[test]
    fn subtraction_from_infinity_is_an_error() {
        assert_eq!(C::Infinite.checked_sub(C::Finite(1.0)), Err(InfiniteSubtraction));
        assert_eq!(C::Finite(1.0).checked_sub(C::Infinite), Err(InfiniteSubtraction));
        assert_eq!(C::Finite(3.0).checked_sub(C::Finite(1.0)), Ok(C::Finite(2.0)));
    }

    #[test]
    fn zero_weight_keeps_hard_constraints() {
        assert_eq!(C::Infinite.scale(0.0), C::Infinite);
        assert_eq!(C::Finite(4.0).scale(0.0), C::Finite(0.0));
    }
}
