//! Scalar abstraction so the whole pipeline can run in 32-bit (production)
//! or 64-bit (verification) precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Storage width in bytes; drives all memory and access accounting.
    const BYTES: usize;
    const NAME: &'static str;

    fn c(x: f64) -> Self;

    fn f64(self) -> f64;

    fn of_usize(x: usize) -> Self {
        Self::c(x as f64)
    }
}

impl Real for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn c(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn c(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self
    }
}

/// Max elementwise relative error between `a` and a reference `b`, with the
/// denominator floored at `floor`.
pub fn max_rel_err<T: Real>(a: &[T], b: &[T], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x.f64(), y.f64());
            (x - y).abs() / y.abs().max(floor)
        })
        .fold(0.0, f64::max)
}
