use crate::error::{invalid, Result};
use crate::problem::LinearEnv;
use crate::rng::RngStream;
use crate::vector::{dist2, dot, SparsityMask};

use super::random_sparse_target;

/// One-step linear decision problem: observe `x ~ N(0, sigma_x^2 I)`,
/// return `x . (theta - theta_star)`.
///
/// `F` is identically zero, so this is a variance testbed: the return
/// variance is `sigma_x^2 ||theta - theta_star||^2`.
#[derive(Clone, Debug)]
pub struct NoisyLinearBandit {
    theta_star: Vec<f64>,
    support: SparsityMask,
    sigma_x: f64,
}

impl NoisyLinearBandit {
    pub fn new(theta_star: Vec<f64>, sigma_x: f64) -> Result<Self> {
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(invalid("sigma_x must be positive"));
        }
        crate::vector::check_finite(&theta_star)?;
        if theta_star.is_empty() {
            return Err(invalid("dimension must be >= 1"));
        }
        let support = SparsityMask::of(&theta_star);
        Ok(Self {
            theta_star,
            support,
            sigma_x,
        })
    }

    /// `theta_star` with `+-1` entries on a random support of size `k_star`.
    pub fn random(dim: usize, k_star: usize, sigma_x: f64, problem_seed: u64) -> Result<Self> {
        let (theta_star, _) = random_sparse_target(dim, k_star, problem_seed)?;
        Self::new(theta_star, sigma_x)
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn support(&self) -> &SparsityMask {
        &self.support
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    /// `Var[f_tau(theta)] = sigma_x^2 ||theta - theta_star||^2`.
    pub fn rollout_variance(&self, theta: &[f64]) -> f64 {
        (self.sigma_x * dist2(theta, &self.theta_star)).powi(2)
    }
}

impl LinearEnv for NoisyLinearBandit {
    fn obs_dim(&self) -> usize {
        self.theta_star.len()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn name(&self) -> String {
        "bandit".into()
    }

    fn observe(&self, _step: usize, rng: &mut RngStream, obs: &mut [f64]) {
        for x in obs.iter_mut() {
            *x = self.sigma_x * rng.standard_normal();
        }
    }

    fn reward(&self, _step: usize, obs: &[f64], action: f64, _rng: &mut RngStream) -> f64 {
        action - dot(obs, &self.theta_star)
    }

    fn exact_expectation(&self, _theta: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn exact_smoothed(&self, theta: &[f64], _sigma: f64) -> Option<(f64, Vec<f64>)> {
        Some((0.0, vec![0.0; theta.len()]))
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        Some(self.theta_star.clone())
    }

    fn relevant_support(&self) -> Option<Vec<usize>> {
        Some(self.support.support().to_vec())
    }
}

#[cfg(test)]
fn bandit_return(theta: &[f64], theta_star: &[f64], x: &[f64]) -> f64 {
    theta
        .iter()
        .zip(theta_star)
        .zip(x)
        .map(|((t, s), xi)| xi * (t - s))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{augment_with_noise, Episodic, FitnessProblem};
    use crate::rng::derive_stream;

    fn moments(p: &dyn FitnessProblem, theta: &[f64], n: u64) -> (f64, f64) {
        let xs: Vec<f64> = (0..n)
            .map(|j| p.rollout(theta, &mut derive_stream(11, [0, 0, j])).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn zero_residual_at_optimum() {
        let b = NoisyLinearBandit::random(6, 2, 1.5, 4).unwrap();
        let p = Episodic(b.clone());
        for j in 0..50 {
            let r = p
                .rollout(b.theta_star(), &mut derive_stream(0, [0, 0, j]))
                .unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn matches_direct_formula() {
        let b = NoisyLinearBandit::random(5, 3, 0.7, 1).unwrap();
        let p = Episodic(b.clone());
        let theta = [0.3, -0.2, 0.9, 0.0, 1.0];
        let mut s = derive_stream(3, [1, 2, 3]);
        let got = p.rollout(&theta, &mut s.clone()).unwrap();
        let mut x = vec![0.0; 5];
        b.observe(0, &mut s, &mut x);
        let want = bandit_return(&theta, b.theta_star(), &x);
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn variance_law_and_zero_mean() {
        // Sample variance of a Gaussian has relative SE sqrt(2/n) ~ 0.45% at 1e5.
        let b = NoisyLinearBandit::random(8, 3, 1.3, 2).unwrap();
        let p = Episodic(b.clone());
        let theta = [0.5, -0.5, 0.25, 0.0, 1.0, -1.0, 0.1, 0.2];
        let n = 100_000;
        let (mean, var) = moments(&p, &theta, n);
        let want = b.rollout_variance(&theta);
        assert!((var - want).abs() <= 0.03 * want, "var {var} want {want}");
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn augmentation_dimension_and_zero_weights() {
        let b = NoisyLinearBandit::random(11, 4, 1.0, 9).unwrap();
        let aug = Episodic(augment_with_noise(b.clone(), 10).unwrap());
        assert_eq!(aug.dim(), 121);
        assert!(augment_with_noise(b.clone(), 0).is_err());
        // Weights only on the real features: identical draws, identical returns.
        let inner = Episodic(b);
        let mut theta = vec![0.0; 121];
        theta[..11].copy_from_slice(&[0.2; 11]);
        for j in 0..100 {
            let s = derive_stream(5, [0, 1, j]);
            assert_eq!(
                aug.rollout(&theta, &mut s.clone()).unwrap(),
                inner.rollout(&theta[..11], &mut s.clone()).unwrap()
            );
        }
        assert_eq!(aug.optimum().unwrap().len(), 121);
    }

    #[test]
    fn unit_noise_weight_adds_unit_variance() {
        let b = NoisyLinearBandit::random(4, 2, 1.0, 0).unwrap();
        let theta_real = [0.5, 0.5, -0.5, 0.0];
        let aug = Episodic(augment_with_noise(b.clone(), 2).unwrap());
        let mut theta = vec![0.0; 12];
        theta[..4].copy_from_slice(&theta_real);
        theta[7] = 1.0;
        let (_, var) = moments(&aug, &theta, 100_000);
        let want = b.rollout_variance(&theta_real) + 1.0;
        assert!((var - want).abs() <= 0.03 * want, "var {var} want {want}");
    }
}
