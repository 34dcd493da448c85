//! Scalar abstractions.
//!
//! All numerical kernels in this crate are written against [`Real`], which is
//! implemented for `f32` and `f64`. Budget arithmetic for the bandit schedule
//! uses [`BudgetScalar`], which additionally covers exact rationals so that
//! iteration budgets can be split without rounding.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, NumAssign, ToPrimitive};

/// Floating point scalar used by models, samplers and discrepancies.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numeric type a bandit budget can be expressed in.
pub trait BudgetScalar: Clone + Num + PartialOrd + Debug {
    fn from_count(n: u64) -> Self;
    fn to_f64_lossy(&self) -> f64;
}

impl BudgetScalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl BudgetScalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }
}

impl BudgetScalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(n as i64)
    }
    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

impl BudgetScalar for Ratio<u64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(n)
    }
    fn to_f64_lossy(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm_sq<F: Real>(a: &[F]) -> F {
    dot(a, a)
}

pub(crate) fn all_finite<F: Real>(a: &[F]) -> bool {
    a.iter().all(|x| x.is_finite())
}
