//! Scalar abstraction for the dictionary-indexed numerics.
//!
//! Everything that only needs field operations and an ordering (rank
//! matching, the closed-setting shift, the enumeration oracles) is written
//! against [`Scalar`], so it runs on `f32`, `f64`, and exact
//! [`BigRational`]. Anything that needs `exp`/`ln` (softmax, the open
//! setting) requires [`Real`].

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive, Zero};

/// Ordered field element usable as a probability.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Allowed absolute deviation of a probability vector's sum from one.
    fn sum_tolerance() -> Self;

    /// `false` for NaN and infinities; exact types are always finite.
    fn is_finite_value(&self) -> bool;

    /// Lossy conversion used for reporting and for mixing with `f64` key material.
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::zero)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::zero)
    }
}

impl Scalar for f64 {
    fn sum_tolerance() -> Self {
        1e-12
    }

    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    // f32 cannot resolve 1e-12; this is about 100 ulps at 1.0.
    fn sum_tolerance() -> Self {
        1e-5
    }

    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for BigRational {
    fn sum_tolerance() -> Self {
        BigRational::zero()
    }

    fn is_finite_value(&self) -> bool {
        true
    }

    fn to_f64_lossy(&self) -> f64 {
        match (self.numer().to_f64(), self.denom().to_f64()) {
            (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
            _ => self.to_f64().unwrap_or(f64::NAN),
        }
    }
}

/// Floating-point scalar: adds transcendental functions.
pub trait Real: Scalar + Float {}

impl<T: Scalar + Float> Real for T {}

/// Exact rational from integer numerator and denominator.
pub fn ratio(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Minimum of two partially ordered values, preferring the first on ties.
pub(crate) fn min_of<T: Scalar>(a: &T, b: &T) -> T {
    if b < a {
        b.clone()
    } else {
        a.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_round_trips_through_f64() {
        let third = ratio(1, 3);
        assert!((third.to_f64_lossy() - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(BigRational::sum_tolerance(), BigRational::zero());
    }

    #[test]
    fn float_finiteness() {
        assert!(!f64::NAN.is_finite_value());
        assert!(!f32::INFINITY.is_finite_value());
        assert!(1.0f64.is_finite_value());
    }
}
