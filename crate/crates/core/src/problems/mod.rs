//! Desk-scale benchmark problems with known constants and closed forms.

mod bandit;
mod bounded_step;
mod chain;
mod quadratic;

pub use bandit::NoisyLinearBandit;
pub use bounded_step::{noncentral_chi2_cdf, BoundedStep};
pub use chain::MultiStepChain;
pub use quadratic::SparseQuadratic;

use crate::error::{invalid, Result};
use crate::rng::{domain, RngStream};

/// Draws a `k_star`-sparse vector with entries `+-1` on a uniformly random
/// support, determined by `problem_seed`. Returns `(theta_star, support)`.
pub fn random_sparse_target(
    dim: usize,
    k_star: usize,
    problem_seed: u64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if k_star == 0 || k_star > dim {
        return Err(invalid(format!("k_star={k_star} outside [1, {dim}]")));
    }
    let mut rng = RngStream::in_domain(domain::PROBLEM, problem_seed, [0, 0, 0]);
    // Partial Fisher-Yates.
    let mut idx: Vec<usize> = (0..dim).collect();
    for i in 0..k_star {
        let j = i + rng.below(dim - i);
        idx.swap(i, j);
    }
    let mut support = idx[..k_star].to_vec();
    support.sort_unstable();
    let mut theta = vec![0.0; dim];
    for &i in &support {
        theta[i] = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    }
    Ok((theta, support))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_target_shape() {
        let (t, s) = random_sparse_target(20, 5, 3).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(crate::vector::support(&t), s);
        assert!(t.iter().all(|v| *v == 0.0 || v.abs() == 1.0));
        assert_eq!(random_sparse_target(20, 5, 3).unwrap(), (t, s));
        let (full, s) = random_sparse_target(4, 4, 0).unwrap();
        assert_eq!(s, vec![0, 1, 2, 3]);
        assert!(full.iter().all(|v| v.abs() == 1.0));
        assert!(random_sparse_target(4, 0, 0).is_err());
        assert!(random_sparse_target(4, 5, 0).is_err());
    }
}
