use nesht_core::vector::support;

/// `(recall, precision)` of the support of `theta` against the true support.
/// Precision is 0 for `theta = 0`.
pub fn support_metrics(theta: &[f64], truth: &[usize]) -> (f64, f64) {
    assert!(!truth.is_empty(), "true support must be non-empty");
    let found = support(theta);
    let hits = found.iter().filter(|i| truth.contains(i)).count() as f64;
    (hits / truth.len() as f64, hits / found.len().max(1) as f64)
}

/// Mean of the last `n` values (all of them when shorter).
pub fn mean_last(xs: &[f64], n: usize) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let tail = &xs[xs.len().saturating_sub(n)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_examples() {
        assert_eq!(support_metrics(&[1.0, 0.0, -2.0, 0.0], &[0, 2]), (1.0, 1.0));
        assert_eq!(support_metrics(&[0.0; 4], &[0, 2]), (0.0, 0.0));
        assert_eq!(support_metrics(&[1.0, 1.0, 0.0, 0.0], &[0, 2]), (0.5, 0.5));
        assert_eq!(
            support_metrics(&[1.0, 0.0, 1.0, 1.0], &[0]),
            (1.0, 1.0 / 3.0)
        );
    }

    #[test]
    fn tail_means_and_medians() {
        assert_eq!(mean_last(&[1.0, 2.0, 3.0], 2), Some(2.5));
        assert_eq!(mean_last(&[4.0], 10), Some(4.0));
        assert_eq!(mean_last(&[], 10), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
