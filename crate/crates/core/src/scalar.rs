//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable as a tensor element.
///
/// Implemented for `f32` and `f64`. Conversions from and to `f64` are total
/// for both, so the helpers below never fail in practice.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Default central-difference step for this precision.
    fn default_fd_step() -> Self;
}

impl Scalar for f32 {
    fn default_fd_step() -> Self {
        1e-3
    }
}

impl Scalar for f64 {
    fn default_fd_step() -> Self {
        1e-6
    }
}
