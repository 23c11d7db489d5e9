//! Fixed-order summation helpers. Results depend only on the order of the
//! input, never on how the inputs were produced, so parallel map + these
//! reductions is bit-identical to a sequential loop.

const LEAF: usize = 8;

/// Pairwise (tree) sum of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum of `Σ_i weights[i] * rows[i]`, with `rows` stored row-major
/// as `weights.len()` rows of width `dim`. Writes into `out`.
pub fn pairwise_weighted_rows(weights: &[f64], rows: &[f64], dim: usize, out: &mut [f64]) {
    debug_assert_eq!(rows.len(), weights.len() * dim);
    debug_assert_eq!(out.len(), dim);
    if weights.len() <= LEAF {
        out.fill(0.0);
        for (w, row) in weights.iter().zip(rows.chunks_exact(dim)) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        return;
    }
    let mid = weights.len() / 2;
    let mut right = vec![0.0; dim];
    pairwise_weighted_rows(&weights[..mid], &rows[..mid * dim], dim, out);
    pairwise_weighted_rows(&weights[mid..], &rows[mid * dim..], dim, &mut right);
    for (o, r) in out.iter_mut().zip(&right) {
        *o += r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_naive_on_integers() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
        let w = vec![1.0; 20];
        let rows: Vec<f64> = (0..40).map(f64::from).collect();
        let mut out = vec![0.0; 2];
        pairwise_weighted_rows(&w, &rows, 2, &mut out);
        assert_eq!(out, vec![380.0, 400.0]);
    }
}
