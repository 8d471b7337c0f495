//! Generic scalar abstraction over f32/f64.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumAssignOps};

/// Floating-point scalar the numeric core is generic over.
///
/// f32 is the training dtype, f64 the verification dtype; tolerances in the
/// test suites are stated per dtype.
pub trait Scalar:
    Float + FloatConst + NumAssignOps + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Wraps an angle to the half-open interval (-pi, pi].
pub fn wrap_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut a = angle % two_pi;
    if a > T::PI() {
        a = a - two_pi;
    } else if a <= -T::PI() {
        a = a + two_pi;
    }
    a
}
