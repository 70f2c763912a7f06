use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar the solvers are generic over (f32 or f64).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + FftNum
        + Debug
        + Display
        + Default
        + Sum
        + Send
        + Sync
        + 'static
{
}

/// Converts an f64 literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

pub(crate) fn max_of<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::neg_infinity(), |m, &x| m.max(x))
}

pub(crate) fn min_of<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::infinity(), |m, &x| m.min(x))
}

pub(crate) fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}
