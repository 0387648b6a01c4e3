//! Floating point abstraction shared by the model, particle and utility code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the engine is generic over: `f32` or `f64`.
///
/// Special functions without a `num-traits` counterpart (log-gamma) are
/// evaluated in double precision and narrowed back.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Infallible for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn lgamma(self) -> Self {
        Self::lit(statrs::function::gamma::ln_gamma(self.as_f64()))
    }

    /// Absolute tolerance used by the root finders: `1e-12`, or a few ulps of
    /// one for narrower types.
    #[inline]
    fn solver_tolerance() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(4.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Table of `ln C(n, k)` for `k = 0..=n`.
pub fn ln_choose_row<T: Scalar>(n: u32) -> Vec<T> {
    let mut row = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0f64;
    row.push(T::zero());
    for k in 1..=n {
        acc += (f64::from(n - k + 1) / f64::from(k)).ln();
        row.push(T::lit(acc));
    }
    row
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_choose<T: Scalar>(n: u32, k: u32) -> T {
    debug_assert!(k <= n);
    let lg = |x: u32| statrs::function::gamma::ln_gamma(f64::from(x) + 1.0);
    T::lit(lg(n) - lg(k) - lg(n - k))
}

/// `ln Γ(x + n) − ln Γ(x)`. Small `n` and large `x` use the exact product
/// form; the log-gamma difference cancels badly once `x` is in the thousands.
pub fn ln_rising<T: Scalar>(x: T, n: u32) -> T {
    if n <= 24 || x > T::lit(1000.0) {
        let mut acc = T::zero();
        for k in 0..n {
            acc = acc + (x + T::lit(f64::from(k))).ln();
        }
        acc
    } else {
        (x + T::lit(f64::from(n))).lgamma() - x.lgamma()
    }
}
