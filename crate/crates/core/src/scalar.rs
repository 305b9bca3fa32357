//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumCast};

/// Real floating-point scalar the deformation calculus is written against.
///
/// Implemented for `f32` and `f64`. Quadrature rules are always generated in
/// `f64` and narrowed with [`Scalar::lit`].
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumCast
    + Debug
    + Display
    + Default
    + Sum
    + rustfft::FftNum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    /// Converts a count into the scalar type.
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm of a coordinate slice.
pub fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt()
}

/// `1 + |v|^2`, the weight base used by rapid-decay seminorms.
pub fn japanese_bracket_sq<T: Scalar>(v: &[T]) -> T {
    T::one() + v.iter().fold(T::zero(), |acc, &c| acc + c * c)
}

/// Summation by recursive halving in index order.
///
/// The reduction tree only depends on the slice length, so the result is
/// bit-reproducible regardless of how the values were produced.
pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().fold(T::zero(), |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sup-norm relative deviation `max|a - b| / max|b|` over paired samples.
///
/// Returns the plain absolute deviation when the reference vanishes
/// identically, so that two zero vectors compare as `0`.
pub fn relative_sup_deviation<T: Scalar>(candidate: &[T], reference: &[T]) -> T {
    assert_eq!(candidate.len(), reference.len(), "sample length mismatch");
    let mut num = T::zero();
    let mut den = T::zero();
    for (&a, &b) in candidate.iter().zip(reference) {
        num = num.max((a - b).abs());
        den = den.max(b.abs());
    }
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..5).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), 5.0);
    }

    #[test]
    fn pairwise_is_order_fixed() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e-3).collect();
        assert_eq!(pairwise_sum(&v).to_bits(), pairwise_sum(&v.clone()).to_bits());
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn relative_deviation_of_zero_vectors_is_zero() {
        assert_eq!(relative_sup_deviation(&[0.0f64; 3], &[0.0; 3]), 0.0);
        assert!((relative_sup_deviation(&[1.0f32, 2.1], &[1.0, 2.0]) - 0.05).abs() < 1e-6);
    }
}
