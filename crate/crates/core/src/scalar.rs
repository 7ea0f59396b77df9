//! Scalar abstraction for the probability arithmetic.
//!
//! Kernels, schedules, chains, and divergences are written against [`Real`]
//! so the same formulas run in `f32` or `f64`. Everything downstream of the
//! samplers uses the crate-level `f64` aliases.

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; panics only on values outside the type's
    /// representable range, which no finite probability or schedule value is.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 value representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar value representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
