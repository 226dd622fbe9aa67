//! Floating-point abstraction shared by every numeric routine in the crate.

use std::str::FromStr;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Real scalar used for features, weights and scores: `f32` or `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Default + FromStr + 'static {
    /// Converts an `f64` constant into `Self`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sums in slice order. Several routines rely on this exact traversal so
/// that algebraically equal losses agree bit for bit.
pub(crate) fn ordered_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Compares two scalars, treating incomparable values as equal.
pub(crate) fn cmp<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}
