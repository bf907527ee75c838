//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the emulator is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self;

    /// Lossy conversion of a count.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Standard normal density.
pub fn normal_pdf<T: Scalar>(u: T) -> T {
    let two = T::of(2.0);
    (-(u * u) / two).exp() / (two * T::PI()).sqrt()
}

/// Standard normal distribution function, evaluated in double precision.
pub fn normal_cdf<T: Scalar>(u: T) -> T {
    let u = u.as_f64();
    T::of(0.5 * statrs::function::erf::erfc(-u / std::f64::consts::SQRT_2))
}
