//! Fitness-problem contract.
//!
//! A problem maps parameters to a random return. `rollout` must be a pure
//! function of `(theta, stream)`: the same stream key yields the same value.

use crate::error::{Error, Result};
use crate::rng::{lane, RngStream};
use crate::vector::dot;

pub trait FitnessProblem: Send + Sync {
    fn dim(&self) -> usize;

    /// One sampled return `f_tau(theta)`.
    fn rollout(&self, theta: &[f64], rng: &mut RngStream) -> Result<f64>;

    /// Short identifier used in artifacts.
    fn name(&self) -> String;

    /// Bound on `|F|` over the whole domain, if known.
    fn bound_b(&self) -> Option<f64> {
        None
    }

    /// Bound on the per-rollout variance of the return, if known.
    fn var_bound_c(&self) -> Option<f64> {
        None
    }

    /// Expected return `F(theta)` in closed form.
    fn exact_expectation(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    /// Gaussian-smoothed value and gradient `(F_sigma, grad F_sigma)`.
    fn exact_smoothed(&self, _theta: &[f64], _sigma: f64) -> Option<(f64, Vec<f64>)> {
        None
    }

    /// Maximizer of `F`, when known.
    fn optimum(&self) -> Option<Vec<f64>> {
        None
    }

    /// Coordinates that matter for the return (support of the optimum).
    fn relevant_support(&self) -> Option<Vec<usize>> {
        None
    }
}

impl<P: FitnessProblem + ?Sized> FitnessProblem for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rollout(&self, theta: &[f64], rng: &mut RngStream) -> Result<f64> {
        (**self).rollout(theta, rng)
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn bound_b(&self) -> Option<f64> {
        (**self).bound_b()
    }
    fn var_bound_c(&self) -> Option<f64> {
        (**self).var_bound_c()
    }
    fn exact_expectation(&self, theta: &[f64]) -> Option<f64> {
        (**self).exact_expectation(theta)
    }
    fn exact_smoothed(&self, theta: &[f64], sigma: f64) -> Option<(f64, Vec<f64>)> {
        (**self).exact_smoothed(theta, sigma)
    }
    fn optimum(&self) -> Option<Vec<f64>> {
        (**self).optimum()
    }
    fn relevant_support(&self) -> Option<Vec<usize>> {
        (**self).relevant_support()
    }
}

/// Episodic environment driven by a linear policy: at step `h` the agent
/// observes `x_h` and acts with `a_h = theta . x_h`. The return is the sum of
/// the immediate rewards.
///
/// Implementors get [`FitnessProblem`] through [`Episodic`].
pub trait LinearEnv: Send + Sync {
    fn obs_dim(&self) -> usize;

    fn horizon(&self) -> usize;

    fn name(&self) -> String;

    /// Draws the observation of step `step` into `obs`.
    fn observe(&self, step: usize, rng: &mut RngStream, obs: &mut [f64]);

    /// Immediate reward for acting `action` after observing `obs`.
    fn reward(&self, step: usize, obs: &[f64], action: f64, rng: &mut RngStream) -> f64;

    fn bound_b(&self) -> Option<f64> {
        None
    }
    fn var_bound_c(&self) -> Option<f64> {
        None
    }
    fn exact_expectation(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
    fn exact_smoothed(&self, _theta: &[f64], _sigma: f64) -> Option<(f64, Vec<f64>)> {
        None
    }
    fn optimum(&self) -> Option<Vec<f64>> {
        None
    }
    fn relevant_support(&self) -> Option<Vec<usize>> {
        None
    }

    /// Immediate rewards of one episode, in order.
    fn episode_rewards(&self, theta: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut obs = vec![0.0; self.obs_dim()];
        (0..self.horizon())
            .map(|h| {
                self.observe(h, rng, &mut obs);
                let action = dot(theta, &obs);
                self.reward(h, &obs, action, rng)
            })
            .collect()
    }
}

/// Adapter exposing a [`LinearEnv`] as a [`FitnessProblem`].
#[derive(Clone, Debug)]
pub struct Episodic<E>(pub E);

impl<E: LinearEnv> FitnessProblem for Episodic<E> {
    fn dim(&self) -> usize {
        self.0.obs_dim()
    }

    fn rollout(&self, theta: &[f64], rng: &mut RngStream) -> Result<f64> {
        if theta.len() != self.0.obs_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.0.obs_dim(),
                got: theta.len(),
            });
        }
        let mut obs = vec![0.0; self.0.obs_dim()];
        let mut total = 0.0;
        for h in 0..self.0.horizon() {
            self.0.observe(h, rng, &mut obs);
            let action = dot(theta, &obs);
            total += self.0.reward(h, &obs, action, rng);
        }
        Ok(total)
    }

    fn name(&self) -> String {
        self.0.name()
    }
    fn bound_b(&self) -> Option<f64> {
        self.0.bound_b()
    }
    fn var_bound_c(&self) -> Option<f64> {
        self.0.var_bound_c()
    }
    fn exact_expectation(&self, theta: &[f64]) -> Option<f64> {
        self.0.exact_expectation(theta)
    }
    fn exact_smoothed(&self, theta: &[f64], sigma: f64) -> Option<(f64, Vec<f64>)> {
        self.0.exact_smoothed(theta, sigma)
    }
    fn optimum(&self) -> Option<Vec<f64>> {
        self.0.optimum()
    }
    fn relevant_support(&self) -> Option<Vec<usize>> {
        self.0.relevant_support()
    }
}

/// Appends `ratio * d0` i.i.d. standard-normal features to every observation
/// of the inner environment. The inner reward only sees the real features,
/// but the action includes the weights on the noise features.
///
/// Noise features are drawn from a dedicated lane of the rollout stream, so
/// the inner environment consumes exactly the same draws as without the
/// wrapper.
#[derive(Clone, Debug)]
pub struct NoiseAugmented<E> {
    inner: E,
    ratio: usize,
}

pub fn augment_with_noise<E: LinearEnv>(inner: E, ratio: usize) -> Result<NoiseAugmented<E>> {
    if ratio < 1 {
        return Err(Error::InvalidArgument("noise ratio must be >= 1".into()));
    }
    Ok(NoiseAugmented { inner, ratio })
}

impl<E> NoiseAugmented<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }
    pub fn ratio(&self) -> usize {
        self.ratio
    }
}

impl<E: LinearEnv> LinearEnv for NoiseAugmented<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim() * (1 + self.ratio)
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn name(&self) -> String {
        format!("{}+noise{}x", self.inner.name(), self.ratio)
    }

    fn observe(&self, step: usize, rng: &mut RngStream, obs: &mut [f64]) {
        let d0 = self.inner.obs_dim();
        self.inner.observe(step, rng, &mut obs[..d0]);
        rng.split(lane::NOISE_FEATURES, step as u64)
            .fill_standard_normal(&mut obs[d0..]);
    }

    fn reward(&self, step: usize, obs: &[f64], action: f64, rng: &mut RngStream) -> f64 {
        self.inner
            .reward(step, &obs[..self.inner.obs_dim()], action, rng)
    }

    fn bound_b(&self) -> Option<f64> {
        None
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        self.inner.optimum().map(|mut v| {
            v.resize(self.obs_dim(), 0.0);
            v
        })
    }

    fn relevant_support(&self) -> Option<Vec<usize>> {
        self.inner.relevant_support()
    }
}

/// Zeroes every immediate reward independently with probability `p_zero`.
#[derive(Clone, Debug)]
pub struct RewardMasked<E> {
    inner: E,
    p_zero: f64,
}

pub fn sparse_reward_mask<E: LinearEnv>(inner: E, p_zero: f64) -> Result<RewardMasked<E>> {
    if !(0.0..=1.0).contains(&p_zero) {
        return Err(Error::InvalidArgument(format!(
            "p_zero={p_zero} outside [0, 1]"
        )));
    }
    Ok(RewardMasked { inner, p_zero })
}

impl<E> RewardMasked<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }
    pub fn p_zero(&self) -> f64 {
        self.p_zero
    }
}

impl<E: LinearEnv> LinearEnv for RewardMasked<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn name(&self) -> String {
        format!("{}+mask{}", self.inner.name(), self.p_zero)
    }

    fn observe(&self, step: usize, rng: &mut RngStream, obs: &mut [f64]) {
        self.inner.observe(step, rng, obs)
    }

    fn reward(&self, step: usize, obs: &[f64], action: f64, rng: &mut RngStream) -> f64 {
        let r = self.inner.reward(step, obs, action, rng);
        let u = rng.split(lane::REWARD_MASK, step as u64).uniform();
        if u < self.p_zero {
            0.0
        } else {
            r
        }
    }

    fn bound_b(&self) -> Option<f64> {
        self.inner.bound_b()
    }

    // Masking is independent of everything else, so F scales by (1 - p).
    fn exact_expectation(&self, theta: &[f64]) -> Option<f64> {
        self.inner
            .exact_expectation(theta)
            .map(|f| (1.0 - self.p_zero) * f)
    }

    fn exact_smoothed(&self, theta: &[f64], sigma: f64) -> Option<(f64, Vec<f64>)> {
        let keep = 1.0 - self.p_zero;
        self.inner
            .exact_smoothed(theta, sigma)
            .map(|(f, g)| (keep * f, g.into_iter().map(|x| keep * x).collect()))
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        self.inner.optimum()
    }

    fn relevant_support(&self) -> Option<Vec<usize>> {
        self.inner.relevant_support()
    }
}
