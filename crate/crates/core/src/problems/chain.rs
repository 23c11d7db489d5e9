use crate::error::{invalid, Result};
use crate::problem::LinearEnv;
use crate::rng::RngStream;
use crate::vector::{check_finite, dot};

use super::random_sparse_target;

/// Episodic linear-policy problem with `horizon` independent steps.
///
/// Each step observes `x ~ N(0, sigma_x^2 I)` and pays
/// `-scale * min((a - x . theta_star)^2, clip) + N(0, noise_std^2)`.
/// Without `clip` the expected return is a sparse quadratic,
/// `F(theta) = -scale * H * sigma_x^2 ||theta - theta_star||^2`. With `clip`
/// each immediate reward lies in `[-scale * clip, 0]` before noise, which
/// gives finite bounds `B` and `C`.
#[derive(Clone, Debug)]
pub struct MultiStepChain {
    theta_star: Vec<f64>,
    horizon: usize,
    scale: f64,
    noise_std: f64,
    sigma_x: f64,
    clip: Option<f64>,
}

impl MultiStepChain {
    pub fn new(
        theta_star: Vec<f64>,
        horizon: usize,
        scale: f64,
        noise_std: f64,
        sigma_x: f64,
        clip: Option<f64>,
    ) -> Result<Self> {
        if theta_star.is_empty() {
            return Err(invalid("dimension must be >= 1"));
        }
        check_finite(&theta_star)?;
        if horizon == 0 {
            return Err(invalid("horizon must be >= 1"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale must be positive"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(invalid("noise_std must be non-negative"));
        }
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(invalid("sigma_x must be positive"));
        }
        if let Some(c) = clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("clip must be positive"));
            }
        }
        Ok(Self {
            theta_star,
            horizon,
            scale,
            noise_std,
            sigma_x,
            clip,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn random(
        dim: usize,
        k_star: usize,
        horizon: usize,
        scale: f64,
        noise_std: f64,
        sigma_x: f64,
        clip: Option<f64>,
        problem_seed: u64,
    ) -> Result<Self> {
        let (theta_star, _) = random_sparse_target(dim, k_star, problem_seed)?;
        Self::new(theta_star, horizon, scale, noise_std, sigma_x, clip)
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    /// Variance of one unclipped immediate reward at `theta`:
    /// the error `e ~ N(0, v)` with `v = sigma_x^2 ||theta - theta_star||^2`,
    /// so `Var[-scale e^2 + noise] = 2 scale^2 v^2 + noise_std^2`.
    pub fn step_variance_unclipped(&self, theta: &[f64]) -> f64 {
        let v = self.sigma_x.powi(2) * sq_dist(theta, &self.theta_star);
        2.0 * self.scale.powi(2) * v * v + self.noise_std.powi(2)
    }

    fn gain(&self) -> f64 {
        self.scale * self.horizon as f64 * self.sigma_x.powi(2)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl LinearEnv for MultiStepChain {
    fn obs_dim(&self) -> usize {
        self.theta_star.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn name(&self) -> String {
        "chain".into()
    }

    fn observe(&self, _step: usize, rng: &mut RngStream, obs: &mut [f64]) {
        for x in obs.iter_mut() {
            *x = self.sigma_x * rng.standard_normal();
        }
    }

    fn reward(&self, _step: usize, obs: &[f64], action: f64, rng: &mut RngStream) -> f64 {
        let err = action - dot(obs, &self.theta_star);
        let mut loss = err * err;
        if let Some(c) = self.clip {
            loss = loss.min(c);
        }
        let noise = if self.noise_std > 0.0 {
            self.noise_std * rng.standard_normal()
        } else {
            0.0
        };
        -self.scale * loss + noise
    }

    fn bound_b(&self) -> Option<f64> {
        self.clip.map(|c| self.horizon as f64 * self.scale * c)
    }

    // A variable confined to an interval of width w has variance <= w^2/4;
    // steps are independent so variances add.
    fn var_bound_c(&self) -> Option<f64> {
        self.clip.map(|c| {
            let w = self.scale * c;
            self.horizon as f64 * (w * w / 4.0 + self.noise_std.powi(2))
        })
    }

    fn exact_expectation(&self, theta: &[f64]) -> Option<f64> {
        match self.clip {
            Some(_) => None,
            None => Some(-self.gain() * sq_dist(theta, &self.theta_star)),
        }
    }

    fn exact_smoothed(&self, theta: &[f64], sigma: f64) -> Option<(f64, Vec<f64>)> {
        if self.clip.is_some() {
            return None;
        }
        let g = self.gain();
        let d = theta.len() as f64;
        let value = -g * (sq_dist(theta, &self.theta_star) + sigma * sigma * d);
        let grad = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(t, s)| -2.0 * g * (t - s))
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{sparse_reward_mask, Episodic, FitnessProblem};
    use crate::rng::derive_stream;

    fn sample(p: &dyn FitnessProblem, theta: &[f64], n: u64) -> (f64, f64) {
        let xs: Vec<f64> = (0..n)
            .map(|j| p.rollout(theta, &mut derive_stream(21, [0, 0, j])).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn perfect_policy_scores_zero() {
        let c = MultiStepChain::random(6, 3, 4, 1.0, 0.0, 1.0, None, 3).unwrap();
        let p = Episodic(c.clone());
        for j in 0..20 {
            let r = p
                .rollout(c.theta_star(), &mut derive_stream(0, [0, 0, j]))
                .unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn single_step_is_one_step_problem() {
        let c = MultiStepChain::random(3, 2, 1, 1.5, 0.0, 1.0, None, 0).unwrap();
        let theta = [0.1, 0.2, 0.3];
        let mut s = derive_stream(4, [0, 0, 0]);
        let got = Episodic(c.clone()).rollout(&theta, &mut s.clone()).unwrap();
        let mut x = [0.0; 3];
        c.observe(0, &mut s, &mut x);
        let e = dot(&theta, &x) - dot(&x, c.theta_star());
        assert!((got + 1.5 * e * e).abs() < 1e-12);
    }

    #[test]
    fn return_variance_adds_over_steps() {
        let c = MultiStepChain::random(5, 2, 6, 0.5, 0.3, 1.0, None, 1).unwrap();
        let theta = [0.2, -0.4, 0.0, 0.1, 0.3];
        let (mean, var) = sample(&Episodic(c.clone()), &theta, 100_000);
        let want = 6.0 * c.step_variance_unclipped(&theta);
        assert!((var - want).abs() <= 0.10 * want, "var {var} want {want}");
        let f = c.exact_expectation(&theta).unwrap();
        assert!((mean - f).abs() <= 4.0 * (var / 1e5).sqrt());
    }

    #[test]
    fn clipped_rewards_respect_bounds() {
        let c = MultiStepChain::random(4, 2, 3, 2.0, 0.0, 1.0, Some(0.5), 1).unwrap();
        assert_eq!(c.bound_b(), Some(3.0));
        assert_eq!(c.var_bound_c(), Some(3.0 * 0.25));
        let p = Episodic(c);
        for j in 0..200 {
            let r = p
                .rollout(&[3.0, -3.0, 1.0, 0.0], &mut derive_stream(1, [0, 0, j]))
                .unwrap();
            assert!((-3.0..=0.0).contains(&r));
        }
    }

    struct ConstantReward {
        horizon: usize,
        r: f64,
    }

    impl LinearEnv for ConstantReward {
        fn obs_dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn name(&self) -> String {
            "constant".into()
        }
        fn observe(&self, _: usize, _: &mut RngStream, obs: &mut [f64]) {
            obs[0] = 1.0;
        }
        fn reward(&self, _: usize, _: &[f64], _: f64, _: &mut RngStream) -> f64 {
            self.r
        }
    }

    #[test]
    fn masking_thins_rewards() {
        // Bernoulli thinning: mean (1 - p) H r, variance H r^2 p (1 - p).
        let env = ConstantReward {
            horizon: 10,
            r: 2.0,
        };
        let masked = Episodic(sparse_reward_mask(env, 0.9).unwrap());
        let n = 100_000u64;
        let (mean, _) = sample(&masked, &[0.0], n);
        let se = (10.0 * 4.0 * 0.09 / n as f64).sqrt();
        assert!((mean - 0.1 * 10.0 * 2.0).abs() <= 4.0 * se, "mean {mean}");
    }

    #[test]
    fn mask_extremes() {
        let c = MultiStepChain::random(3, 2, 5, 1.0, 0.2, 1.0, None, 0).unwrap();
        let theta = [0.5, 0.0, -0.5];
        let plain = Episodic(c.clone());
        let zero = Episodic(sparse_reward_mask(c.clone(), 0.0).unwrap());
        let all = Episodic(sparse_reward_mask(c.clone(), 1.0).unwrap());
        for j in 0..50 {
            let s = derive_stream(2, [0, 0, j]);
            let base = plain.rollout(&theta, &mut s.clone()).unwrap();
            assert_eq!(zero.rollout(&theta, &mut s.clone()).unwrap(), base);
            assert_eq!(all.rollout(&theta, &mut s.clone()).unwrap(), 0.0);
        }
        assert!(sparse_reward_mask(c.clone(), 1.5).is_err());
        assert!(sparse_reward_mask(c, -0.1).is_err());
    }
}
