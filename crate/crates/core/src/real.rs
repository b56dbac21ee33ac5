//! Floating-point abstraction: training runs at 32-bit, gradient checking at 64-bit.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Scalar type every numeric module is generic over.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + Sum + Send + Sync + Debug + Display + 'static
{
    fn lit(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
