//! Numeric abstraction shared by the dynamics algorithms.
//!
//! Every recursive algorithm in this crate is written once over [`Scalar`] so
//! that the same code runs on plain `f64` and on taped reverse-mode variables
//! (including nested ones, for second derivatives).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;

    /// Primal value, stripped of any derivative bookkeeping.
    fn value(&self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;

    /// `Some(v)` when `self` carries no derivative information at all.
    fn constant_value(&self) -> Option<f64>;

    /// True only when `self` is known to be the constant zero, so that
    /// multiplying by it can be skipped without changing any derivative.
    fn is_zero_constant(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn value(&self) -> f64 {
        *self
    }

    #[inline]
    fn sin(self) -> Self {
        sin_cos_f64(self).0
    }

    #[inline]
    fn cos(self) -> Self {
        sin_cos_f64(self).1
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn constant_value(&self) -> Option<f64> {
        Some(*self)
    }

    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        sin_cos_f64(self)
    }
}

/// Sine and cosine from a single out-of-line routine. The optimizer may or
/// may not fuse separate `sin`/`cos` calls depending on the call site, and
/// the two forms can differ in the last bit; funnelling every evaluation
/// (plain, recorded, replayed) through here keeps them bit-identical.
#[inline(never)]
pub fn sin_cos_f64(x: f64) -> (f64, f64) {
    x.sin_cos()
}

/// Lifts a slice of `f64` into any scalar type as constants.
pub fn lift<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&v| S::from_f64(v)).collect()
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
