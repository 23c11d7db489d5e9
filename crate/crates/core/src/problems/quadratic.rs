use crate::error::{invalid, Error, Result};
use crate::problem::FitnessProblem;
use crate::rng::RngStream;
use crate::vector::check_finite;

use super::random_sparse_target;

/// `f_tau(theta) = -scale ||theta - theta_star||^2 + N(0, noise_std^2)`.
///
/// Closed forms:
/// `F_sigma(theta) = -scale (||theta - theta_star||^2 + sigma^2 d)` and
/// `grad F_sigma(theta) = -2 scale (theta - theta_star)`.
#[derive(Clone, Debug)]
pub struct SparseQuadratic {
    theta_star: Vec<f64>,
    scale: f64,
    noise_std: f64,
}

impl SparseQuadratic {
    pub fn new(theta_star: Vec<f64>, scale: f64, noise_std: f64) -> Result<Self> {
        if theta_star.is_empty() {
            return Err(invalid("dimension must be >= 1"));
        }
        check_finite(&theta_star)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale must be positive"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(invalid("noise_std must be non-negative"));
        }
        Ok(Self {
            theta_star,
            scale,
            noise_std,
        })
    }

    pub fn random(
        dim: usize,
        k_star: usize,
        scale: f64,
        noise_std: f64,
        problem_seed: u64,
    ) -> Result<Self> {
        let (theta_star, _) = random_sparse_target(dim, k_star, problem_seed)?;
        Self::new(theta_star, scale, noise_std)
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn sq_dist(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl FitnessProblem for SparseQuadratic {
    fn dim(&self) -> usize {
        self.theta_star.len()
    }

    fn rollout(&self, theta: &[f64], rng: &mut RngStream) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let noise = if self.noise_std > 0.0 {
            self.noise_std * rng.standard_normal()
        } else {
            0.0
        };
        Ok(-self.scale * self.sq_dist(theta) + noise)
    }

    fn name(&self) -> String {
        "sparse_quadratic".into()
    }

    fn var_bound_c(&self) -> Option<f64> {
        Some(self.noise_std * self.noise_std)
    }

    fn exact_expectation(&self, theta: &[f64]) -> Option<f64> {
        Some(-self.scale * self.sq_dist(theta))
    }

    fn exact_smoothed(&self, theta: &[f64], sigma: f64) -> Option<(f64, Vec<f64>)> {
        let d = self.dim() as f64;
        let value = -self.scale * (self.sq_dist(theta) + sigma * sigma * d);
        let grad = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(t, s)| -2.0 * self.scale * (t - s))
            .collect();
        Some((value, grad))
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        Some(self.theta_star.clone())
    }

    fn relevant_support(&self) -> Option<Vec<usize>> {
        Some(crate::vector::support(&self.theta_star))
    }
}
