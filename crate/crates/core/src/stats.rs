//! Sample statistics shared by the estimators.

use crate::Scalar;

pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    let n = T::from_usize_lossy(values.len());
    values.iter().copied().sum::<T>() / n
}

/// Unbiased sample variance.
pub fn variance<T: Scalar>(values: &[T]) -> T {
    let n = values.len();
    if n < 2 {
        return T::zero();
    }
    let m = mean(values);
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    ss / T::from_usize_lossy(n - 1)
}

/// Third central moment with the `n² / ((n−1)(n−2))` small-sample correction
/// (the unbiased third cumulant estimator).
pub fn third_central<T: Scalar>(values: &[T]) -> T {
    let n = values.len();
    if n < 3 {
        return T::zero();
    }
    let m = mean(values);
    let m3 = values.iter().map(|&v| (v - m).powi(3)).sum::<T>() / T::from_usize_lossy(n);
    let nf = T::from_usize_lossy(n);
    m3 * nf * nf / ((nf - T::one()) * (nf - T::lit(2.0)))
}

/// Standard error of `stat` by the method of batch means: the sample is cut
/// into `batches` contiguous pieces, `stat` is evaluated on each, and the
/// spread of those values is scaled to the full sample.
pub fn batch_means_se<T: Scalar>(values: &[T], batches: usize, stat: impl Fn(&[T]) -> T) -> T {
    let batches = batches.min(values.len()).max(2);
    let size = values.len() / batches;
    if size == 0 {
        return T::zero();
    }
    let per: Vec<T> = (0..batches)
        .map(|b| stat(&values[b * size..(b + 1) * size]))
        .collect();
    (variance(&per) / T::from_usize_lossy(batches)).sqrt()
}

/// Quantile by linear interpolation between order statistics of a sorted slice.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> T {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    let pos = q.max(T::zero()).min(T::one()) * T::from_usize_lossy(n - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_usize_lossy(lo);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

pub fn norm<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}
