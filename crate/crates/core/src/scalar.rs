//! Floating-point scalar abstraction shared by the sketch, solver and
//! calibration code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the numerical core is generic over (`f32` or `f64`).
///
/// Solver tolerances are expressed per type since a fixed absolute
/// threshold that suits `f64` is below `f32` resolution.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Primal feasibility tolerance of the simplex solver (relative).
    const FEAS_TOL: f64;
    /// Reduced-cost optimality tolerance (relative to cost magnitude).
    const OPT_TOL: f64;
    /// Smallest pivot magnitude accepted in the ratio test.
    const PIVOT_TOL: f64;

    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const FEAS_TOL: f64 = 1e-9;
    const OPT_TOL: f64 = 1e-11;
    const PIVOT_TOL: f64 = 1e-9;
}

impl Scalar for f32 {
    const FEAS_TOL: f64 = 1e-4;
    const OPT_TOL: f64 = 1e-5;
    const PIVOT_TOL: f64 = 1e-5;
}

/// Compensated (Kahan) summation.
pub fn kahan_sum<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}
