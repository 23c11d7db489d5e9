use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::problem::FitnessProblem;
use crate::rng::RngStream;
use crate::vector::{check_finite, dist2};

/// Indicator of a Euclidean ball: `F(theta) = 1` if
/// `||theta - center|| <= radius`, else `0`. Discontinuous, deterministic,
/// with `B = 1` and `C = 0`.
#[derive(Clone, Debug)]
pub struct BoundedStep {
    center: Vec<f64>,
    radius: f64,
}

impl BoundedStep {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(invalid("dimension must be >= 1"));
        }
        check_finite(&center)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("radius must be positive"));
        }
        Ok(Self { center, radius })
    }

    /// Ball centred at the origin.
    pub fn centered(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], radius)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        if dist2(theta, &self.center) <= self.radius {
            1.0
        } else {
            0.0
        }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl FitnessProblem for BoundedStep {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn rollout(&self, theta: &[f64], _rng: &mut RngStream) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(self.value(theta))
    }

    fn name(&self) -> String {
        "bounded_step".into()
    }

    fn bound_b(&self) -> Option<f64> {
        Some(1.0)
    }

    fn var_bound_c(&self) -> Option<f64> {
        Some(0.0)
    }

    fn exact_expectation(&self, theta: &[f64]) -> Option<f64> {
        Some(self.value(theta))
    }

    /// `||theta + sigma eps - c||^2 / sigma^2` is noncentral chi-square with
    /// `d` degrees of freedom and noncentrality `lambda = ||theta - c||^2 / sigma^2`,
    /// so `F_sigma = P(chi'^2_d(lambda) <= r^2 / sigma^2)`.
    ///
    /// With `dP/dlambda = -(P_d - P_{d+2}) / 2` and `dlambda/dtheta = 2 (theta - c) / sigma^2`:
    /// `grad F_sigma = -(theta - c) / sigma^2 * (P_d - P_{d+2})`.
    fn exact_smoothed(&self, theta: &[f64], sigma: f64) -> Option<(f64, Vec<f64>)> {
        if sigma.is_nan() || sigma <= 0.0 {
            return None;
        }
        let d = self.dim() as f64;
        let s2 = sigma * sigma;
        let lambda = dist2(theta, &self.center).powi(2) / s2;
        let x = self.radius * self.radius / s2;
        let p_d = noncentral_chi2_cdf(x, d, lambda);
        let p_d2 = noncentral_chi2_cdf(x, d + 2.0, lambda);
        let slope = (p_d - p_d2) / s2;
        let grad = theta
            .iter()
            .zip(&self.center)
            .map(|(t, c)| -(t - c) * slope)
            .collect();
        Some((p_d, grad))
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        Some(self.center.clone())
    }
}

/// CDF of the noncentral chi-square distribution as a Poisson mixture of
/// central chi-square CDFs.
pub fn noncentral_chi2_cdf(x: f64, dof: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let half_x = x / 2.0;
    if lambda <= 0.0 {
        return gamma_lr(dof / 2.0, half_x);
    }
    let mu = lambda / 2.0;
    let terms = (mu + 12.0 * mu.sqrt() + 30.0).ceil() as usize;
    let ln_mu = mu.ln();
    let mut total = 0.0;
    for j in 0..=terms {
        let jf = j as f64;
        let weight = (-mu + jf * ln_mu - ln_gamma(jf + 1.0)).exp();
        if weight == 0.0 {
            continue;
        }
        total += weight * gamma_lr(dof / 2.0 + jf, half_x);
    }
    total.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn phi(x: f64) -> f64 {
        Normal::standard().cdf(x)
    }

    #[test]
    fn step_values() {
        let p = BoundedStep::new(vec![1.0, 1.0], 0.5).unwrap();
        assert_eq!(p.value(&[1.0, 1.0]), 1.0);
        assert_eq!(p.value(&[2.0, 1.0]), 0.0);
        assert_eq!(p.value(&[1.5, 1.0]), 1.0);
        assert!(BoundedStep::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn one_dimensional_closed_form() {
        // F_sigma(theta) = Phi((1 - theta)/sigma) - Phi((-1 - theta)/sigma).
        let p = BoundedStep::centered(1, 1.0).unwrap();
        for &sigma in &[0.3, 1.0, 2.5] {
            for &theta in &[-2.0, -0.7, 0.0, 0.4, 1.0, 3.0] {
                let (f, g) = p.exact_smoothed(&[theta], sigma).unwrap();
                let want = phi((1.0 - theta) / sigma) - phi((-1.0 - theta) / sigma);
                assert!(
                    (f - want).abs() < 1e-10,
                    "sigma {sigma} theta {theta}: {f} vs {want}"
                );
                let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let dwant = (-pdf((1.0 - theta) / sigma) + pdf((-1.0 - theta) / sigma)) / sigma;
                assert!((g[0] - dwant).abs() < 1e-10, "grad {} vs {dwant}", g[0]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = BoundedStep::new(vec![0.2, -0.1, 0.0, 0.5], 1.2).unwrap();
        let theta = [0.7, 0.3, -0.4, 1.1];
        let sigma = 0.8;
        let (_, g) = p.exact_smoothed(&theta, sigma).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let mut up = theta;
            let mut dn = theta;
            up[i] += h;
            dn[i] -= h;
            let fd = (p.exact_smoothed(&up, sigma).unwrap().0
                - p.exact_smoothed(&dn, sigma).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn central_limit_of_cdf() {
        // lambda = 0 reduces to the central chi-square CDF; chi2_2 has CDF 1 - exp(-x/2).
        assert!((noncentral_chi2_cdf(3.0, 2.0, 0.0) - (1.0 - (-1.5f64).exp())).abs() < 1e-12);
        assert!(noncentral_chi2_cdf(1.0, 3.0, 1e4) < 1e-12);
        assert_eq!(noncentral_chi2_cdf(0.0, 3.0, 2.0), 0.0);
    }
}
