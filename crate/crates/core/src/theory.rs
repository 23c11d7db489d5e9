//! Analytical constants of the convergence analysis and Monte Carlo oracles
//! used as test references.
//!
//! * smoothness of `F_sigma`: `L = (d + 1) B / sigma^2`
//! * estimator variance: `C d / (N sigma^2) + d B^2 / (n sigma^2)`
//! * step size and budgets: `alpha = c / L`, `T = 2 c2 B / (alpha eps^2)`,
//!   `N >= 4 c1 d C / (sigma^2 eps^2)`, `n >= 4 c1 d B^2 / (sigma^2 eps^2)`
//!   with `c1 = (2c(1-2c) + 2) / (c(1-2c))` and `c2 = (12 - 8c) / (1 - 2c)`.
//!
//! The iteration count uses `c2 = (12 - 8c)/(1 - 2c)` as stated with the
//! theorem; its proof carries the `B / (alpha T)` factor with the same
//! constant, so the two agree up to the factor 2 already in `T`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::FitnessProblem;
use crate::rng::{domain, RngStream};
use crate::vector::norm2;

/// Smallest and largest accepted `c`; `c1` and `c2` have poles at 0 and 1/2.
pub const C_MIN: f64 = 0.01;
pub const C_MAX: f64 = 0.49;

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name}={v} must be positive and finite")))
    }
}

/// `L = (d + 1) B / sigma^2`.
pub fn smoothness_constant(bound_b: f64, dim: usize, sigma: f64) -> Result<f64> {
    positive("B", bound_b)?;
    positive("sigma", sigma)?;
    if dim == 0 {
        return Err(invalid("dimension must be >= 1"));
    }
    Ok((dim as f64 + 1.0) * bound_b / (sigma * sigma))
}

/// `C d / (N sigma^2) + d B^2 / (n sigma^2)`.
pub fn variance_bound(
    var_c: f64,
    bound_b: f64,
    dim: usize,
    sigma: f64,
    population: u64,
    rollouts: u64,
) -> Result<f64> {
    positive("sigma", sigma)?;
    if !(var_c >= 0.0 && var_c.is_finite()) {
        return Err(invalid(format!("C={var_c} must be non-negative")));
    }
    positive("B", bound_b)?;
    if population == 0 || rollouts == 0 {
        return Err(invalid("population and rollouts must be >= 1"));
    }
    let d = dim as f64;
    let s2 = sigma * sigma;
    Ok(var_c * d / (rollouts as f64 * s2) + d * bound_b * bound_b / (population as f64 * s2))
}

pub fn c1(c: f64) -> f64 {
    let q = c * (1.0 - 2.0 * c);
    (2.0 * q + 2.0) / q
}

pub fn c2(c: f64) -> f64 {
    (12.0 - 8.0 * c) / (1.0 - 2.0 * c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremBudget {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub iterations: u64,
    pub rollouts: u64,
    pub population: u64,
    pub epsilon: f64,
    pub smoothness: f64,
    pub bound_b: f64,
    pub var_c: f64,
    pub dim: usize,
    pub sigma: f64,
}

fn ceil_count(name: &str, x: f64) -> Result<u64> {
    if !x.is_finite() || x >= u64::MAX as f64 {
        return Err(invalid(format!("{name} budget overflows ({x:e})")));
    }
    Ok(x.ceil().max(1.0) as u64)
}

/// Step size and sample budgets that make the stationarity bound at most
/// `epsilon`.
pub fn theorem_budget(
    bound_b: f64,
    var_c: f64,
    dim: usize,
    sigma: f64,
    c: f64,
    epsilon: f64,
) -> Result<TheoremBudget> {
    if !(c > 0.0 && c < 0.5) {
        return Err(invalid(format!("c={c} outside (0, 1/2)")));
    }
    if !(c > C_MIN && c < C_MAX) {
        return Err(invalid(format!(
            "c={c} too close to a pole of c1/c2; use c in ({C_MIN}, {C_MAX})"
        )));
    }
    positive("epsilon", epsilon)?;
    if !(var_c >= 0.0 && var_c.is_finite()) {
        return Err(invalid(format!("C={var_c} must be non-negative")));
    }
    let l = smoothness_constant(bound_b, dim, sigma)?;
    let (k1, k2) = (c1(c), c2(c));
    let alpha = c / l;
    let e2 = epsilon * epsilon;
    let s2 = sigma * sigma;
    let d = dim as f64;
    Ok(TheoremBudget {
        c,
        c1: k1,
        c2: k2,
        alpha,
        iterations: ceil_count("T", 2.0 * k2 * bound_b / (alpha * e2))?,
        rollouts: ceil_count("N", 4.0 * k1 * d * var_c / (s2 * e2))?,
        population: ceil_count("n", 4.0 * k1 * d * bound_b * bound_b / (s2 * e2))?,
        epsilon,
        smoothness: l,
        bound_b,
        var_c,
        dim,
        sigma,
    })
}

/// Total rollouts `T * N * n`.
pub fn episode_complexity(budget: &TheoremBudget) -> u128 {
    u128::from(budget.iterations) * u128::from(budget.rollouts) * u128::from(budget.population)
}

/// Monte Carlo estimate of `F_sigma` and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    pub value_se: f64,
    pub grad: Vec<f64>,
    pub grad_se: Vec<f64>,
    pub samples: usize,
}

pub const MIN_ORACLE_SAMPLES: usize = 1000;
const CHUNK: usize = 1024;

/// Streams of oracle sample `m`: perturbation `(m, 0, 0)`, rollouts
/// `(m, 0, r)` for `r >= 1`, in the oracle domain.
#[allow(clippy::too_many_arguments)]
fn oracle_sample(
    problem: &dyn FitnessProblem,
    theta: &[f64],
    sigma: f64,
    inner_rollouts: usize,
    seed: u64,
    m: u64,
    eps: &mut [f64],
    point: &mut [f64],
) -> Result<f64> {
    RngStream::in_domain(domain::ORACLE, seed, [m, 0, 0]).fill_standard_normal(eps);
    for ((p, t), e) in point.iter_mut().zip(theta).zip(eps.iter()) {
        *p = t + sigma * e;
    }
    let mut total = 0.0;
    for r in 1..=inner_rollouts as u64 {
        let mut rng = RngStream::in_domain(domain::ORACLE, seed, [m, 0, r]);
        total += problem.rollout(point, &mut rng)?;
    }
    Ok(total / inner_rollouts as f64)
}

#[derive(Clone)]
struct Moments {
    n: usize,
    f: f64,
    f2: f64,
    g: Vec<f64>,
    g2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            f: 0.0,
            f2: 0.0,
            g: vec![0.0; d],
            g2: vec![0.0; d],
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.n += other.n;
        self.f += other.f;
        self.f2 += other.f2;
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
        for (a, b) in self.g2.iter_mut().zip(&other.g2) {
            *a += b;
        }
        self
    }
}

fn mean_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Plain Monte Carlo over `samples` perturbations, averaging
/// `inner_rollouts` rollouts per perturbation. Reduction is chunked in a
/// fixed order, so the result does not depend on the thread count.
pub fn smoothing_oracle(
    problem: &dyn FitnessProblem,
    theta: &[f64],
    sigma: f64,
    samples: usize,
    inner_rollouts: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    positive("sigma", sigma)?;
    if samples < MIN_ORACLE_SAMPLES {
        return Err(invalid(format!(
            "oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {samples}"
        )));
    }
    if inner_rollouts == 0 {
        return Err(invalid("inner_rollouts must be >= 1"));
    }
    let d = problem.dim();
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.len(),
        });
    }
    let chunks: Vec<Moments> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(d);
            let mut eps = vec![0.0; d];
            let mut point = vec![0.0; d];
            for m in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let f = oracle_sample(
                    problem,
                    theta,
                    sigma,
                    inner_rollouts,
                    seed,
                    m as u64,
                    &mut eps,
                    &mut point,
                )?;
                acc.n += 1;
                acc.f += f;
                acc.f2 += f * f;
                for ((g, g2), e) in acc.g.iter_mut().zip(acc.g2.iter_mut()).zip(&eps) {
                    let v = f * e / sigma;
                    *g += v;
                    *g2 += v * v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = chunks.iter().fold(Moments::new(d), |acc, c| acc.merge(c));
    let (value, value_se) = mean_se(total.f, total.f2, total.n);
    let (grad, grad_se) = total
        .g
        .iter()
        .zip(&total.g2)
        .map(|(s, s2)| mean_se(*s, *s2, total.n))
        .unzip();
    Ok(OracleEstimate {
        value,
        value_se,
        grad,
        grad_se,
        samples: total.n,
    })
}

/// Where the probe gets `grad F_sigma` from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// The problem's closed form (zero standard error).
    Exact,
    /// Monte Carlo oracle with common random numbers across each pair.
    MonteCarlo {
        samples: usize,
        inner_rollouts: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub pairs: usize,
    /// First points are uniform in `[-box, box]^d` around the origin.
    pub box_half_width: f64,
    pub gradient: GradientSource,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRatio {
    pub separation: f64,
    pub ratio: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    /// Standard error of the pair attaining the maximum.
    pub max_ratio_se: f64,
    pub pairs: Vec<PairRatio>,
}

/// Difference of smoothed gradients at two points and the standard error
/// of its norm.
fn gradient_difference(
    problem: &dyn FitnessProblem,
    a: &[f64],
    b: &[f64],
    sigma: f64,
    source: GradientSource,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    match source {
        GradientSource::Exact => {
            let ga = problem
                .exact_smoothed(a, sigma)
                .ok_or(Error::MissingReference)?
                .1;
            let gb = problem
                .exact_smoothed(b, sigma)
                .ok_or(Error::MissingReference)?
                .1;
            Ok((ga.iter().zip(&gb).map(|(x, y)| x - y).collect(), 0.0))
        }
        GradientSource::MonteCarlo {
            samples,
            inner_rollouts,
        } => {
            if samples < MIN_ORACLE_SAMPLES || inner_rollouts == 0 {
                return Err(invalid(
                    "Monte Carlo probe needs >= 1000 samples and >= 1 rollout",
                ));
            }
            let d = a.len();
            let mut sum = vec![0.0; d];
            let mut second = vec![0.0; d * d];
            let mut eps = vec![0.0; d];
            let mut point = vec![0.0; d];
            let mut diff = vec![0.0; d];
            for m in 0..samples as u64 {
                let fa = oracle_sample(
                    problem,
                    a,
                    sigma,
                    inner_rollouts,
                    seed,
                    m,
                    &mut eps,
                    &mut point,
                )?;
                let fb = oracle_sample(
                    problem,
                    b,
                    sigma,
                    inner_rollouts,
                    seed,
                    m,
                    &mut eps,
                    &mut point,
                )?;
                for (dv, e) in diff.iter_mut().zip(&eps) {
                    *dv = (fa - fb) * e / sigma;
                }
                for r in 0..d {
                    sum[r] += diff[r];
                    for c in 0..d {
                        second[r * d + c] += diff[r] * diff[c];
                    }
                }
            }
            let n = samples as f64;
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let norm = norm2(&mean);
            if norm == 0.0 {
                return Ok((mean, 0.0));
            }
            // Delta method: Var ||D|| ~ u^T Cov u / n with u = D / ||D||.
            let u: Vec<f64> = mean.iter().map(|x| x / norm).collect();
            let mut var = 0.0;
            for r in 0..d {
                for c in 0..d {
                    let cov = (second[r * d + c] - n * mean[r] * mean[c]) / (n - 1.0);
                    var += u[r] * cov * u[c];
                }
            }
            Ok((mean, (var.max(0.0) / n).sqrt()))
        }
    }
}

/// Samples point pairs at separations `0.1 sigma` (even pairs) and
/// `10 sigma` (odd pairs) and reports the largest observed
/// `||grad F_sigma(a) - grad F_sigma(b)|| / ||a - b||`.
pub fn lipschitz_probe(
    problem: &dyn FitnessProblem,
    sigma: f64,
    cfg: &ProbeConfig,
) -> Result<LipschitzReport> {
    positive("sigma", sigma)?;
    if cfg.pairs == 0 {
        return Err(invalid("pairs must be >= 1"));
    }
    let d = problem.dim();
    let pairs: Vec<PairRatio> = (0..cfg.pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngStream::in_domain(domain::PROBE, cfg.seed, [p as u64, 0, 0]);
            let a: Vec<f64> = (0..d)
                .map(|_| cfg.box_half_width * (2.0 * rng.uniform() - 1.0))
                .collect();
            let mut dir = vec![0.0; d];
            rng.fill_standard_normal(&mut dir);
            let len = norm2(&dir);
            let separation = if p % 2 == 0 {
                0.1 * sigma
            } else {
                10.0 * sigma
            };
            let b: Vec<f64> = a
                .iter()
                .zip(&dir)
                .map(|(x, u)| x + separation * u / len)
                .collect();
            let (diff, se) =
                gradient_difference(problem, &a, &b, sigma, cfg.gradient, cfg.seed ^ p as u64)?;
            Ok(PairRatio {
                separation,
                ratio: norm2(&diff) / separation,
                se: se / separation,
            })
        })
        .collect::<Result<_>>()?;
    let best = pairs
        .iter()
        .copied()
        .max_by(|x, y| x.ratio.total_cmp(&y.ratio))
        .expect("at least one pair");
    Ok(LipschitzReport {
        max_ratio: best.ratio,
        max_ratio_se: best.se,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{BoundedStep, SparseQuadratic};

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_constant(1.0, 1, 1.0).unwrap(), 2.0);
        assert_eq!(smoothness_constant(1.0, 9, 1.0).unwrap(), 10.0);
        assert_eq!(smoothness_constant(2.0, 3, 0.5).unwrap(), 32.0);
        assert!(smoothness_constant(0.0, 3, 0.5).is_err());
        assert!(smoothness_constant(1.0, 0, 0.5).is_err());
        assert!(smoothness_constant(1.0, 3, -0.5).is_err());
    }

    #[test]
    fn variance_bound_examples() {
        assert_eq!(variance_bound(0.0, 1.0, 4, 1.0, 1, 1).unwrap(), 4.0);
        assert_eq!(variance_bound(1.0, 1.0, 4, 1.0, 2, 4).unwrap(), 3.0);
        let one = variance_bound(0.0, 1.5, 6, 0.7, 3, 2).unwrap();
        let two = variance_bound(0.0, 1.5, 6, 0.7, 6, 2).unwrap();
        assert_eq!(one / 2.0, two);
        assert!(variance_bound(0.0, 1.0, 4, 0.0, 1, 1).is_err());
    }

    #[test]
    fn budget_guards() {
        for c in [0.0, 0.005, 0.01, 0.49, 0.5, 0.7, -1.0] {
            assert!(theorem_budget(1.0, 1.0, 4, 1.0, c, 0.5).is_err(), "c={c}");
        }
        assert!(theorem_budget(1.0, 1.0, 4, 1.0, 0.25, 0.0).is_err());
        assert!(theorem_budget(1.0, -1.0, 4, 1.0, 0.25, 0.5).is_err());
        assert!(theorem_budget(1.0, 1.0, 4, 1.0, 0.25, 1e-12).is_err());
    }

    #[test]
    fn zero_variance_needs_one_rollout() {
        let b = theorem_budget(1.0, 0.0, 4, 1.0, 0.25, 0.5).unwrap();
        assert_eq!(b.rollouts, 1);
    }

    #[test]
    fn oracle_requires_enough_samples() {
        let p = BoundedStep::centered(1, 1.0).unwrap();
        assert!(smoothing_oracle(&p, &[0.0], 1.0, 999, 1, 0).is_err());
    }

    #[test]
    fn exact_probe_on_quadratic_is_two_scale() {
        let p = SparseQuadratic::random(5, 2, 1.5, 0.0, 0).unwrap();
        let cfg = ProbeConfig {
            pairs: 20,
            box_half_width: 2.0,
            gradient: GradientSource::Exact,
            seed: 1,
        };
        let rep = lipschitz_probe(&p, 0.5, &cfg).unwrap();
        for pr in &rep.pairs {
            assert!((pr.ratio - 3.0).abs() < 1e-9, "{pr:?}");
        }
    }

    #[test]
    fn oracle_is_thread_count_independent() {
        let p = SparseQuadratic::random(3, 1, 1.0, 0.2, 0).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(6)
            .build()
            .unwrap();
        let a = one.install(|| smoothing_oracle(&p, &[0.1, 0.2, 0.3], 0.5, 5000, 2, 3).unwrap());
        let b = many.install(|| smoothing_oracle(&p, &[0.1, 0.2, 0.3], 0.5, 5000, 2, 3).unwrap());
        assert_eq!(a, b);
    }
}
