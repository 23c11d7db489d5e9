//! NES gradient estimators of the Gaussian-smoothed fitness.
//!
//! For perturbation `i` at step `t` the direction `eps_i` is drawn from the
//! stream `(t, i, 0)`; its rollouts `j = 1..=N` use streams `(t, i, j)`. The
//! rollouts are therefore sampled after, and keyed by, their perturbation.
//! The estimator is the plain average
//!
//! `g = 1/(n N) sum_i sum_j f_{tau_ij}(theta + sigma eps_i) eps_i / sigma`
//!
//! with no mirrored sampling and no fitness shaping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::FitnessProblem;
use crate::reduce::{pairwise_sum, pairwise_weighted_rows};
use crate::rng::{derive_stream, RngStream};

/// Work (rollouts times dimension) below which estimates run sequentially.
/// Both paths produce identical bits.
const PARALLEL_WORK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Smoothing radius.
    pub sigma: f64,
    /// Number of perturbations.
    pub population: usize,
    /// Rollouts per perturbation.
    pub rollouts: usize,
}

impl EstimatorConfig {
    pub fn new(sigma: f64, population: usize, rollouts: usize) -> Result<Self> {
        let cfg = Self {
            sigma,
            population,
            rollouts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma={} must be positive", self.sigma)));
        }
        if self.population == 0 {
            return Err(invalid("population must be >= 1"));
        }
        if self.rollouts == 0 {
            return Err(invalid("rollouts per perturbation must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    pub population: usize,
    pub rollouts: usize,
    pub sigma: f64,
    /// Mean return over the rollouts of each perturbation.
    pub per_perturbation_scores: Vec<f64>,
}

/// `d` standard-normal draws from `rng`.
pub fn sample_perturbation(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    let mut eps = vec![0.0; dim];
    rng.fill_standard_normal(&mut eps);
    eps
}

/// `(f / sigma) * eps`.
pub fn single_estimate(f_value: f64, eps: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(invalid(format!("sigma={sigma} must be positive")));
    }
    let w = f_value / sigma;
    Ok(eps.iter().map(|e| w * e).collect())
}

struct Perturbation {
    eps: Vec<f64>,
    mean_return: f64,
}

fn evaluate_perturbation(
    theta: &[f64],
    problem: &dyn FitnessProblem,
    cfg: &EstimatorConfig,
    seed: u64,
    t: u64,
    i: usize,
) -> Result<Perturbation> {
    let d = theta.len();
    let eps = sample_perturbation(&mut derive_stream(seed, [t, i as u64, 0]), d);
    let point: Vec<f64> = theta
        .iter()
        .zip(&eps)
        .map(|(th, e)| th + cfg.sigma * e)
        .collect();
    let mut returns = Vec::with_capacity(cfg.rollouts);
    for j in 1..=cfg.rollouts {
        let mut rng = derive_stream(seed, [t, i as u64, j as u64]);
        let f = problem
            .rollout(&point, &mut rng)
            .map_err(|e| Error::Rollout {
                perturbation: i,
                rollout: j,
                reason: e.to_string(),
            })?;
        if !f.is_finite() {
            return Err(Error::Rollout {
                perturbation: i,
                rollout: j,
                reason: format!("non-finite return {f}"),
            });
        }
        returns.push(f);
    }
    Ok(Perturbation {
        eps,
        mean_return: pairwise_sum(&returns) / cfg.rollouts as f64,
    })
}

/// The `(n x N)`-averaged estimator at step index `t` of a run seeded with
/// `seed`. Bit-identical whatever the thread pool size.
pub fn averaged_estimate(
    theta: &[f64],
    problem: &dyn FitnessProblem,
    cfg: &EstimatorConfig,
    seed: u64,
    t: u64,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let d = problem.dim();
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.len(),
        });
    }
    let n = cfg.population;
    let eval = |i| evaluate_perturbation(theta, problem, cfg, seed, t, i);
    let perturbations: Vec<Perturbation> = if n * cfg.rollouts * d >= PARALLEL_WORK {
        (0..n).into_par_iter().map(eval).collect::<Result<_>>()?
    } else {
        (0..n).map(eval).collect::<Result<_>>()?
    };

    let scale = cfg.sigma * n as f64;
    let weights: Vec<f64> = perturbations
        .iter()
        .map(|p| p.mean_return / scale)
        .collect();
    let mut rows = Vec::with_capacity(n * d);
    for p in &perturbations {
        rows.extend_from_slice(&p.eps);
    }
    let mut g = vec![0.0; d];
    pairwise_weighted_rows(&weights, &rows, d, &mut g);
    Ok(GradientEstimate {
        g,
        population: n,
        rollouts: cfg.rollouts,
        sigma: cfg.sigma,
        per_perturbation_scores: perturbations.iter().map(|p| p.mean_return).collect(),
    })
}

/// Mean squared error of the estimator around a reference gradient, with
/// its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceMeasurement {
    pub value: f64,
    pub se: f64,
    pub reps: usize,
}

/// `(1/reps) sum_r ||g^(r) - reference||^2` over `reps` independent
/// estimates (replicate `r` uses step index `r`). When `reference` is
/// `None`, the problem's closed-form smoothed gradient is used.
pub fn empirical_estimator_variance(
    theta: &[f64],
    problem: &dyn FitnessProblem,
    cfg: &EstimatorConfig,
    seed: u64,
    reps: usize,
    reference: Option<&[f64]>,
) -> Result<VarianceMeasurement> {
    if reps < 2 {
        return Err(invalid("reps must be >= 2"));
    }
    let owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            owned = problem
                .exact_smoothed(theta, cfg.sigma)
                .ok_or(Error::MissingReference)?
                .1;
            &owned
        }
    };
    if reference.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: reference.len(),
        });
    }
    let errors: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let est = averaged_estimate(theta, problem, cfg, seed, r as u64)?;
            Ok(est
                .g
                .iter()
                .zip(reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum())
        })
        .collect::<Result<_>>()?;
    let (value, se) = mean_and_se(&errors);
    Ok(VarianceMeasurement { value, se, reps })
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::SparseQuadratic;

    struct Constant(f64, usize);

    impl FitnessProblem for Constant {
        fn dim(&self) -> usize {
            self.1
        }
        fn rollout(&self, _: &[f64], _: &mut RngStream) -> Result<f64> {
            Ok(self.0)
        }
        fn name(&self) -> String {
            "constant".into()
        }
        fn exact_smoothed(&self, theta: &[f64], _: f64) -> Option<(f64, Vec<f64>)> {
            Some((self.0, vec![0.0; theta.len()]))
        }
    }

    struct Failing;

    impl FitnessProblem for Failing {
        fn dim(&self) -> usize {
            2
        }
        fn rollout(&self, theta: &[f64], _: &mut RngStream) -> Result<f64> {
            Ok(if theta[0] > 0.0 { f64::NAN } else { 0.0 })
        }
        fn name(&self) -> String {
            "failing".into()
        }
    }

    #[test]
    fn single_estimate_examples() {
        assert_eq!(
            single_estimate(0.0, &[1.0, 2.0], 1.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            single_estimate(2.0, &[1.0, -1.0], 1.0).unwrap(),
            vec![2.0, -2.0]
        );
        assert_eq!(single_estimate(3.0, &[2.0], 0.5).unwrap(), vec![12.0]);
        assert!(single_estimate(1.0, &[1.0], 0.0).is_err());
        assert!(single_estimate(1.0, &[1.0], -1.0).is_err());
    }

    #[test]
    fn perturbation_is_deterministic() {
        let a = sample_perturbation(&mut derive_stream(5, [1, 2, 0]), 7);
        let b = sample_perturbation(&mut derive_stream(5, [1, 2, 0]), 7);
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_average_is_single_estimate() {
        let p = SparseQuadratic::new(vec![1.0, -1.0, 0.0], 1.0, 0.3).unwrap();
        let theta = [0.2, 0.1, -0.3];
        let cfg = EstimatorConfig::new(0.4, 1, 1).unwrap();
        let est = averaged_estimate(&theta, &p, &cfg, 77, 5).unwrap();
        let eps = sample_perturbation(&mut derive_stream(77, [5, 0, 0]), 3);
        let point: Vec<f64> = theta.iter().zip(&eps).map(|(t, e)| t + 0.4 * e).collect();
        let f = p
            .rollout(&point, &mut derive_stream(77, [5, 0, 1]))
            .unwrap();
        assert_eq!(est.g, single_estimate(f, &eps, 0.4).unwrap());
        assert_eq!(est.per_perturbation_scores, vec![f]);
    }

    #[test]
    fn constant_fitness_has_zero_mean_gradient() {
        let p = Constant(5.0, 4);
        let cfg = EstimatorConfig::new(1.0, 1, 1).unwrap();
        let reps = 10_000;
        let samples: Vec<Vec<f64>> = (0..reps)
            .map(|t| averaged_estimate(&[0.0; 4], &p, &cfg, 3, t).unwrap().g)
            .collect();
        for c in 0..4 {
            let xs: Vec<f64> = samples.iter().map(|g| g[c]).collect();
            let (mean, se) = mean_and_se(&xs);
            assert!(mean.abs() <= 4.0 * se, "coord {c}: {mean} se {se}");
        }
    }

    #[test]
    fn rollout_failure_carries_indices() {
        let cfg = EstimatorConfig::new(1.0, 8, 2).unwrap();
        let err = averaged_estimate(&[0.0, 0.0], &Failing, &cfg, 0, 0).unwrap_err();
        assert!(matches!(err, Error::Rollout { rollout: 1, .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::new(0.0, 1, 1).is_err());
        assert!(EstimatorConfig::new(1.0, 0, 1).is_err());
        assert!(EstimatorConfig::new(1.0, 1, 0).is_err());
        let p = Constant(1.0, 2);
        let cfg = EstimatorConfig::new(1.0, 1, 1).unwrap();
        assert!(averaged_estimate(&[0.0; 3], &p, &cfg, 0, 0).is_err());
    }

    #[test]
    fn variance_requires_reference() {
        let cfg = EstimatorConfig::new(1.0, 1, 1).unwrap();
        assert_eq!(
            empirical_estimator_variance(&[0.0, 0.0], &Failing, &cfg, 0, 10, None),
            Err(Error::MissingReference)
        );
        assert!(
            empirical_estimator_variance(&[0.0, 0.0], &Constant(1.0, 2), &cfg, 0, 1, None).is_err()
        );
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let p = SparseQuadratic::random(64, 4, 1.0, 0.5, 1).unwrap();
        let theta = vec![0.1; 64];
        let cfg = EstimatorConfig::new(0.3, 100, 2).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let a = one.install(|| averaged_estimate(&theta, &p, &cfg, 9, 3).unwrap());
        let b = many.install(|| averaged_estimate(&theta, &p, &cfg, 9, 3).unwrap());
        assert_eq!(a, b);
    }
}
