//! Median / MAD robust z-scores for peer comparison.

use crate::scalar::Scalar;

/// Consistency constant turning a MAD into a standard-deviation estimate under normality.
pub const ROBUST_Z_CONSTANT: f64 = 0.6745;

/// Score reported for a deviating value when the peers' MAD is zero.
pub fn score_sentinel<T: Scalar>() -> T {
    T::max_value()
}

/// Median of `values`; `None` when empty. NaNs sort last.
pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Greater));
    let n = sorted.len();
    let mid = n / 2;
    Some(if n % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / T::lit(2.0)
    })
}

/// Median absolute deviation about the median.
pub fn mad<T: Scalar>(values: &[T]) -> Option<T> {
    let m = median(values)?;
    let deviations: Vec<T> = values.iter().map(|v| (*v - m).abs()).collect();
    median(&deviations)
}

/// `0.6745·|x − median| / MAD` for every value, in input order.
///
/// With a zero MAD, values equal to the median score 0 and every other value
/// scores [`score_sentinel`].
pub fn robust_z_scores<T: Scalar>(values: &[T]) -> Option<Vec<T>> {
    let m = median(values)?;
    let spread = mad(values)?;
    let k = T::lit(ROBUST_Z_CONSTANT);
    Some(
        values
            .iter()
            .map(|v| {
                let dev = (*v - m).abs();
                if spread > T::zero() {
                    k * dev / spread
                } else if dev == T::zero() {
                    T::zero()
                } else {
                    score_sentinel()
                }
            })
            .collect(),
    )
}
