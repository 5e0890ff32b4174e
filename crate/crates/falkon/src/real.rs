//! Working-precision abstraction.
//!
//! The solver runs in a single working precision (`f32` or `f64`) chosen at
//! the API boundary, while accumulations that the design pins at 64 bits
//! always go through `f64` regardless of `T`.

use std::fmt;

/// Scalar type usable as working precision.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    /// Bytes per element, used to convert byte budgets into element budgets.
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Unit roundoff of the working precision.
    fn unit_roundoff() -> f64;
}

impl Real for f32 {
    const BYTES: usize = 4;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn unit_roundoff() -> f64 {
        (f32::EPSILON / 2.0) as f64
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn unit_roundoff() -> f64 {
        f64::EPSILON / 2.0
    }
}
