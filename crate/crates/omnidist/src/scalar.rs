//! Floating-point scalar abstraction for the geometry core.
//!
//! Camera models, rigid transforms, the output head, and the metric kernels
//! are generic over [`Scalar`] so the same formulas run in `f32` or `f64`.
//! The concrete pipeline (ray caches, warping, the estimator, the CLI) is
//! instantiated at `f64` math over `f32` pixel buffers; see the type aliases
//! at the crate root.

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::FloatConst
    + nalgebra::RealField
{
    /// Converts an `f64` constant into this scalar type.
    fn of(value: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(value).expect("finite f64 constant")
    }

    /// Widens to `f64` for accumulation and reporting.
    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sums a slice by pairwise (tree) reduction.
///
/// The reduction order depends only on the slice length, so means computed
/// from it are reproducible run to run regardless of how the values were
/// produced, and the error growth is O(log n) rather than O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let v = [1.0, 2.0, 3.0, 4.5];
        assert_eq!(pairwise_sum(&v), 10.5);
    }

    #[test]
    fn pairwise_sum_is_deterministic_and_accurate() {
        let v: Vec<f64> = (0..10_001).map(|i| (i as f64).sin() * 1e-3).collect();
        let a = pairwise_sum(&v);
        let b = pairwise_sum(&v);
        assert_eq!(a.to_bits(), b.to_bits());
        // Kahan reference.
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for x in &v {
            let y = x - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        assert!((a - s).abs() < 1e-12);
    }

    #[test]
    fn scalar_round_trips_constants() {
        assert_eq!(<f32 as Scalar>::of(0.5), 0.5f32);
        assert_eq!(0.25f64.as_f64(), 0.25);
    }
}
