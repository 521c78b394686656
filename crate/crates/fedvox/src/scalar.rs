//! Scalar abstraction: the whole crate is generic over f32/f64.

use num_traits::{Float, FloatConst};

/// Floating-point scalar the field, renderer and optimizer are generic over.
pub trait Scalar:
    Float + FloatConst + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self;
    fn of_f32(v: f32) -> Self;
    fn of_usize(v: usize) -> Self;
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;

    fn two() -> Self {
        Self::one() + Self::one()
    }
    fn half() -> Self {
        Self::one() / Self::two()
    }
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn of_f32(v: f32) -> Self {
        v
    }
    fn of_usize(v: usize) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn of_f32(v: f32) -> Self {
        v as f64
    }
    fn of_usize(v: usize) -> Self {
        v as f64
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Numerically stable softplus, ln(1 + e^x).
pub fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + e^-|x|) avoids overflow for large |x|.
    x.max(T::zero()) + x.abs().neg().exp().ln_1p()
}

/// Logistic sigmoid, 1 / (1 + e^-x). Also the derivative of softplus.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + x.neg().exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of softplus: the logit whose softplus equals `y` (y > 0).
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    // ln(e^y - 1), rewritten as y + ln(1 - e^-y) for stability at large y.
    y + (-(y.neg().exp())).ln_1p()
}

/// Inverse of sigmoid for y in (0, 1).
pub fn logit<T: Scalar>(y: T) -> T {
    (y / (T::one() - y)).ln()
}
