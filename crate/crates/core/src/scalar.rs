//! Numeric abstraction shared by the box geometry and suppression code.
//!
//! Everything that only needs field arithmetic and ordering is written against
//! [`Scalar`], so the same code runs on `f32`, `f64` and exact rationals
//! (`Ratio<i64>`). Transcendental steps (the Gaussian Soft-NMS decay) go
//! through `f64` and back.

use std::cmp::Ordering;
use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    #[inline]
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Converts from `f64`. Panics if the value is not representable, which
    /// only happens for non-finite input.
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("value not representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Total order used for sorting; incomparable values (NaN) sort as equal.
    #[inline]
    fn total_cmp_lossy(&self, other: &Self) -> Ordering {
        self.partial_cmp(other).unwrap_or(Ordering::Equal)
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}
