//! Experiment configuration files (JSON, versioned, unknown keys rejected).

use std::path::{Path, PathBuf};

use nesht_core::problems::{BoundedStep, MultiStepChain, NoisyLinearBandit, SparseQuadratic};
use nesht_core::{
    augment_with_noise, k_from_ratio, sparse_reward_mask, Episodic, EstimatorConfig,
    FitnessProblem, HtConfig, LinearEnv, OptimizerConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Run,
    Sweep,
    TheoryCheck,
    VarianceProbe,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Sweep => "sweep",
            Mode::TheoryCheck => "theory-check",
            Mode::VarianceProbe => "variance-probe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub optimizer: Option<OptimizerSection>,
    /// Sparsity arms. `run` accepts at most one (vanilla when empty).
    #[serde(default)]
    pub sparsity: Vec<Sparsity>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub theory: Option<TheorySection>,
    #[serde(default)]
    pub variance_probe: Option<VarianceProbeSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Bandit {
        dim: usize,
        k_star: usize,
        #[serde(default = "one")]
        sigma_x: f64,
        #[serde(default)]
        noise_ratio: Option<usize>,
        #[serde(default)]
        problem_seed: Option<u64>,
    },
    SparseQuadratic {
        dim: usize,
        k_star: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        problem_seed: Option<u64>,
    },
    BoundedStep {
        dim: usize,
        #[serde(default = "one")]
        radius: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    Chain {
        dim: usize,
        k_star: usize,
        horizon: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        noise_std: f64,
        #[serde(default = "one")]
        sigma_x: f64,
        #[serde(default)]
        clip: Option<f64>,
        #[serde(default)]
        noise_ratio: Option<usize>,
        #[serde(default)]
        p_zero: Option<f64>,
        #[serde(default)]
        problem_seed: Option<u64>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_eval_rollouts() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub alpha: f64,
    pub iterations: u64,
    pub sigma: f64,
    pub population: usize,
    pub rollouts: usize,
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: usize,
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Width of the feature groups in the heatmap; defaults to the real
    /// observation width of noise-augmented problems, else no heatmap.
    #[serde(default)]
    pub group_size: Option<usize>,
}

/// One arm of an ablation: vanilla NES, a truncated fraction `beta`, or an
/// explicit capacity `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    Vanilla,
    Beta(f64),
    K(usize),
}

impl Sparsity {
    pub fn capacity(self, dim: usize) -> Result<Option<usize>, HarnessError> {
        match self {
            Sparsity::Vanilla => Ok(None),
            Sparsity::Beta(b) => k_from_ratio(dim, b)
                .map(Some)
                .map_err(HarnessError::from_core_config),
            Sparsity::K(k) => HtConfig::new(k, dim)
                .map(|h| Some(h.k))
                .map_err(HarnessError::from_core_config),
        }
    }

    /// Label used in file names and the summary (`vanilla`, `beta0.9`, `k12`).
    pub fn label(self) -> String {
        match self {
            Sparsity::Vanilla => "vanilla".into(),
            Sparsity::Beta(b) => format!("beta{b}"),
            Sparsity::K(k) => format!("k{k}"),
        }
    }

    /// Truncated fraction reported in the summary.
    pub fn beta(self, dim: usize) -> f64 {
        match self {
            Sparsity::Vanilla => 0.0,
            Sparsity::Beta(b) => b,
            Sparsity::K(k) => 1.0 - k as f64 / dim as f64,
        }
    }
}

fn default_theory_points() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub sigma: f64,
    /// Random evaluation points per check, uniform in `[-box, box]^d`.
    #[serde(default = "default_theory_points")]
    pub points: usize,
    #[serde(default = "one")]
    pub box_half_width: f64,
    /// Estimates averaged by the unbiasedness check.
    pub unbiased_samples: usize,
    /// Replicates per grid cell of the variance check.
    pub variance_reps: usize,
    pub populations: Vec<usize>,
    pub rollouts: Vec<usize>,
    pub lipschitz_pairs: usize,
    /// Monte Carlo samples for gradients without a closed form.
    #[serde(default)]
    pub oracle_samples: Option<usize>,
    /// Variance bound `C`. Overrides the problem's declared bound; measured
    /// when neither is available.
    #[serde(default)]
    pub var_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceProbeSection {
    pub sigmas: Vec<f64>,
    pub populations: Vec<usize>,
    pub rollouts: Vec<usize>,
    pub reps: usize,
    #[serde(default = "default_theory_points")]
    pub points: usize,
    #[serde(default = "one")]
    pub box_half_width: f64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<(Self, Vec<u8>), HarnessError> {
        let bytes = std::fs::read(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_slice(&bytes)?;
        Ok((cfg, bytes))
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_slice(bytes).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        // Builds the problem once to surface parameter errors early.
        let dim = self.problem.build(self.seeds[0])?.dim();
        match self.mode {
            Mode::Run | Mode::Sweep => {
                let Some(opt) = &self.optimizer else {
                    return bad(format!(
                        "mode {} needs an optimizer section",
                        self.mode.as_str()
                    ));
                };
                if self.mode == Mode::Run && self.sparsity.len() > 1 {
                    return bad("mode run takes at most one sparsity arm; use sweep".into());
                }
                if self.mode == Mode::Sweep && self.sparsity.is_empty() {
                    return bad("mode sweep needs at least one sparsity arm".into());
                }
                for arm in self.arms() {
                    let cfg = opt.to_core(arm.capacity(dim)?, self.seeds[0]);
                    cfg.validate(dim).map_err(HarnessError::from_core_config)?;
                }
                if let Some(g) = opt.group_size {
                    if g == 0 || g > dim {
                        return bad(format!("group_size {g} must be in 1..={dim}"));
                    }
                }
            }
            Mode::TheoryCheck => {
                let Some(t) = &self.theory else {
                    return bad("mode theory-check needs a theory section".into());
                };
                if !(t.sigma > 0.0 && t.sigma.is_finite()) {
                    return bad("theory.sigma must be positive".into());
                }
                if t.points == 0
                    || t.unbiased_samples < 2
                    || t.variance_reps < 2
                    || t.lipschitz_pairs == 0
                {
                    return bad("theory sample counts too small".into());
                }
                if t.populations.is_empty() || t.rollouts.is_empty() {
                    return bad("theory grid must be non-empty".into());
                }
                if t.populations.contains(&0) || t.rollouts.contains(&0) {
                    return bad("theory grid entries must be >= 1".into());
                }
            }
            Mode::VarianceProbe => {
                let Some(v) = &self.variance_probe else {
                    return bad("mode variance-probe needs a variance_probe section".into());
                };
                if v.sigmas.is_empty() || v.populations.is_empty() || v.rollouts.is_empty() {
                    return bad("variance_probe grid must be non-empty".into());
                }
                for &s in &v.sigmas {
                    for (&n, &r) in v.populations.iter().zip(&v.rollouts) {
                        EstimatorConfig::new(s, n, r).map_err(HarnessError::from_core_config)?;
                    }
                }
                if v.reps < 2 || v.points == 0 {
                    return bad("variance_probe needs reps >= 2 and points >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Sparsity arms, with an empty list meaning vanilla only.
    pub fn arms(&self) -> Vec<Sparsity> {
        if self.sparsity.is_empty() {
            vec![Sparsity::Vanilla]
        } else {
            self.sparsity.clone()
        }
    }
}

impl OptimizerSection {
    pub fn to_core(&self, k: Option<usize>, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            eval_rollouts: self.eval_rollouts,
            checkpoint_every: self.checkpoint_every,
            group_size: self.group_size,
            ..OptimizerConfig::new(
                self.alpha,
                self.iterations,
                EstimatorConfig {
                    sigma: self.sigma,
                    population: self.population,
                    rollouts: self.rollouts,
                },
                seed,
            )
        }
        .with_ht(k.map(|k| HtConfig { k }))
    }
}

fn wrap<E: LinearEnv + 'static>(
    env: E,
    noise_ratio: Option<usize>,
) -> nesht_core::Result<Box<dyn FitnessProblem>> {
    Ok(match noise_ratio {
        Some(m) => Box::new(Episodic(augment_with_noise(env, m)?)),
        None => Box::new(Episodic(env)),
    })
}

impl ProblemSpec {
    /// Instantiates the problem. Random targets use `problem_seed` when
    /// given, otherwise the run seed.
    pub fn build(&self, run_seed: u64) -> Result<Box<dyn FitnessProblem>, HarnessError> {
        let built: nesht_core::Result<Box<dyn FitnessProblem>> = match self {
            ProblemSpec::Bandit {
                dim,
                k_star,
                sigma_x,
                noise_ratio,
                problem_seed,
            } => {
                NoisyLinearBandit::random(*dim, *k_star, *sigma_x, problem_seed.unwrap_or(run_seed))
                    .and_then(|b| wrap(b, *noise_ratio))
            }
            ProblemSpec::SparseQuadratic {
                dim,
                k_star,
                scale,
                noise_std,
                problem_seed,
            } => SparseQuadratic::random(
                *dim,
                *k_star,
                *scale,
                *noise_std,
                problem_seed.unwrap_or(run_seed),
            )
            .map(|q| Box::new(q) as Box<dyn FitnessProblem>),
            ProblemSpec::BoundedStep {
                dim,
                radius,
                center,
            } => match center {
                Some(c) if c.len() != *dim => Err(nesht_core::Error::DimensionMismatch {
                    expected: *dim,
                    got: c.len(),
                }),
                Some(c) => BoundedStep::new(c.clone(), *radius),
                None => BoundedStep::centered(*dim, *radius),
            }
            .map(|p| Box::new(p) as Box<dyn FitnessProblem>),
            ProblemSpec::Chain {
                dim,
                k_star,
                horizon,
                scale,
                noise_std,
                sigma_x,
                clip,
                noise_ratio,
                p_zero,
                problem_seed,
            } => MultiStepChain::random(
                *dim,
                *k_star,
                *horizon,
                *scale,
                *noise_std,
                *sigma_x,
                *clip,
                problem_seed.unwrap_or(run_seed),
            )
            .and_then(|c| match p_zero {
                Some(p) => wrap(sparse_reward_mask(c, *p)?, *noise_ratio),
                None => wrap(c, *noise_ratio),
            }),
        };
        built.map_err(HarnessError::from_core_config)
    }

    /// Width of the real observation block for noise-augmented problems.
    pub fn real_width(&self) -> Option<usize> {
        match self {
            ProblemSpec::Bandit {
                dim,
                noise_ratio: Some(_),
                ..
            }
            | ProblemSpec::Chain {
                dim,
                noise_ratio: Some(_),
                ..
            } => Some(*dim),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "mode": "sweep",
            "problem": {"name": "bandit", "dim": 11, "k_star": 3, "noise_ratio": 10},
            "optimizer": {"alpha": 0.01, "iterations": 5, "sigma": 0.5, "population": 4, "rollouts": 1},
            "sparsity": ["vanilla", {"beta": 0.9}, {"k": 5}],
            "seeds": [1, 2]
        })
    }

    fn parse(v: &serde_json::Value) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::from_slice(v.to_string().as_bytes())
    }

    #[test]
    fn parses_sample() {
        let cfg = parse(&sample()).unwrap();
        assert_eq!(cfg.arms().len(), 3);
        assert_eq!(cfg.problem.build(1).unwrap().dim(), 121);
        assert_eq!(cfg.arms()[1].capacity(121).unwrap(), Some(12));
        assert_eq!(cfg.arms()[1].label(), "beta0.9");
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut v = sample();
        v["extra"] = 1.into();
        assert!(parse(&v).is_err());
        let mut v = sample();
        v["problem"]["sigma"] = 1.0.into();
        assert!(parse(&v).is_err());
        let mut v = sample();
        v["optimizer"]["beta"] = 0.5.into();
        assert!(parse(&v).is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        let mut v = sample();
        v["seeds"] = serde_json::json!([]);
        assert!(matches!(parse(&v), Err(HarnessError::Config(_))));
        let mut v = sample();
        v["schema_version"] = 2.into();
        assert!(parse(&v).is_err());
        let mut v = sample();
        v["problem"]["name"] = "cartpole".into();
        assert!(parse(&v).is_err());
        let mut v = sample();
        v["sparsity"] = serde_json::json!([{"beta": 1.5}]);
        assert!(parse(&v).is_err());
        let mut v = sample();
        v["mode"] = "run".into();
        assert!(parse(&v).is_err(), "run with three arms");
        let mut v = sample();
        v["optimizer"]["alpha"] = 0.0.into();
        assert!(parse(&v).is_err());
    }
}
