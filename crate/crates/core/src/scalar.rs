//! Scalar abstraction for the closed-form analysis layer.
//!
//! The estimator formulas in [`crate::theory`] are generic over the float
//! width; `f64` is the concrete choice everywhere else (see
//! [`crate::Scalar`]).

use num_traits::{Float, FromPrimitive};

/// Floating scalar for closed-form computations (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("representable count")
    }
}

impl Real for f32 {}
impl Real for f64 {}
