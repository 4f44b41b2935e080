//! Floating point element types.

use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::Float;

/// On-disk element type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Element type of a [`Tensor`](crate::Tensor). Implemented for `f32`
/// (training) and `f64` (gradient checks).
///
/// Transcendental functions go through `libm` directly rather than through
/// [`Float`], whose backend changes when another crate in the build enables
/// `num-traits/std`. Results are therefore the same in every build.
pub trait Element:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;
    fn exp_m(self) -> Self;
    fn ln_m(self) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
    #[inline]
    fn exp_m(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_m(self) -> Self {
        libm::logf(self)
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
    #[inline]
    fn exp_m(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_m(self) -> Self {
        libm::log(self)
    }
}

/// Shorthand for `T::from_f64`.
#[inline]
pub(crate) fn c<T: Element>(v: f64) -> T {
    T::from_f64(v)
}
