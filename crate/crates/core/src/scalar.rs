//! Scalar abstraction over the floating-point type used by the solvers.
//!
//! All numerical kernels are generic over [`Scalar`]; `f64` is the default
//! precision (see the `Real` alias at the crate root) and `f32` is supported
//! for experimentation.

use nalgebra::RealField;

/// Floating-point scalar usable by every solver in this crate.
///
/// Beyond the field operations from `nalgebra::RealField` (which builds on
/// the num-traits hierarchy), interval arithmetic needs access to adjacent
/// representable values so that enclosures can be widened outward after each
/// rounded operation.
pub trait Scalar: RealField + Copy + Send + Sync + 'static {
    fn from_double(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Smallest representable value strictly greater than `self`.
    fn next_up(self) -> Self;
    /// Largest representable value strictly less than `self`.
    fn next_down(self) -> Self;
    fn is_finite(self) -> bool;
}


impl Scalar for f64 {
    #[inline]
    fn from_double(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn next_up(self) -> Self {
        f64::next_up(self)
    }
    #[inline]
    fn next_down(self) -> Self {
        f64::next_down(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_double(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn next_up(self) -> Self {
        f32::next_up(self)
    }
    #[inline]
    fn next_down(self) -> Self {
        f32::next_down(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}
