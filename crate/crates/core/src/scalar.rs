//! Scalar abstractions shared by the numeric modules.
//!
//! Two tiers are used across the crate:
//!
//! * [`Field`] covers anything with exact field arithmetic and an ordering.
//!   Both `f64` and [`Rational`](crate::Rational) satisfy it, which lets the
//!   metric code (IoU, precision/recall, AP) run bit-exact on rationals and
//!   be checked against float results.
//! * [`Real`] adds transcendental functions (`ln`, `exp`, `sqrt`) and is
//!   required by the mixture-model code.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Ordered field arithmetic: `f32`, `f64`, `Ratio<i64>`, ...
pub trait Field: Num + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static {
    /// Exact conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Clamp into `[lo, hi]`.
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        self.max_of(lo).min_of(hi)
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl<T> Field for T where T: Num + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static {}

/// Floating point scalar: `f32` or `f64`.
pub trait Real: Field + Float + ToPrimitive + Default {
    /// Convert an `f64` constant into this type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }
}

impl<T> Real for T where T: Field + Float + ToPrimitive + Default {}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn field_helpers_on_rationals() {
        let a = Ratio::new(1i64, 3);
        let b = Ratio::new(1i64, 2);
        assert_eq!(a.min_of(b), a);
        assert_eq!(a.max_of(b), b);
        assert_eq!(Ratio::<i64>::from_count(7), Ratio::from_integer(7));
        assert_eq!(
            Ratio::new(3i64, 2).clamp_to(Ratio::from_integer(0), Ratio::from_integer(1)),
            Ratio::from_integer(1)
        );
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }
}
