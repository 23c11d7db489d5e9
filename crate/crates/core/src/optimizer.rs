//! NES ascent with per-step hard thresholding.
//!
//! Each step forms `theta_{t+1/2} = theta_t + alpha * g(theta_t)` from the
//! averaged estimator and, when a capacity is configured, keeps the `k`
//! largest coordinates: `theta_{t+1} = trunc(theta_{t+1/2}, k)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{averaged_estimate, EstimatorConfig, GradientEstimate};
use crate::ht::{trunc_in_place, HtConfig};
use crate::problem::FitnessProblem;
use crate::reduce::pairwise_sum;
use crate::rng::derive_stream;
use crate::vector::{check_finite, dist2, feature_group_norms, l0_norm, norm2};

/// Iterates with a coordinate above this magnitude are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

fn default_eval_rollouts() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Learning rate.
    pub alpha: f64,
    /// Number of iterations `T`.
    pub iterations: u64,
    pub estimator: EstimatorConfig,
    /// Sparsity capacity; `None` runs vanilla NES.
    #[serde(default)]
    pub ht: Option<HtConfig>,
    pub base_seed: u64,
    /// Emit a checkpoint every this many steps (0 disables).
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: usize,
    /// Width of the coordinate groups whose L1 norms are recorded each step.
    #[serde(default)]
    pub group_size: Option<usize>,
    /// Starting point; all zeros when absent. Truncated once before step 0.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

impl OptimizerConfig {
    pub fn new(alpha: f64, iterations: u64, estimator: EstimatorConfig, base_seed: u64) -> Self {
        Self {
            alpha,
            iterations,
            estimator,
            ht: None,
            base_seed,
            checkpoint_every: 0,
            eval_rollouts: default_eval_rollouts(),
            group_size: None,
            theta0: None,
        }
    }

    pub fn with_ht(mut self, ht: Option<HtConfig>) -> Self {
        self.ht = ht;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha={} must be positive", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        self.estimator.validate()?;
        if let Some(ht) = self.ht {
            HtConfig::new(ht.k, dim)?;
        }
        if self.eval_rollouts == 0 {
            return Err(invalid("eval_rollouts must be >= 1"));
        }
        if self.group_size == Some(0) {
            return Err(invalid("group_size must be >= 1"));
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t0.len(),
                });
            }
            check_finite(t0)?;
        }
        Ok(())
    }

    /// Stable identifier of the configuration (hex FNV-1a of its JSON form).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    /// Number of completed steps.
    pub t: u64,
    /// `theta_{t-1/2}` of the last completed step (equals `theta` before step 0).
    pub last_half_step: Vec<f64>,
    pub base_seed: u64,
}

/// Metrics recorded after each completed step, evaluated at the new iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub score: f64,
    pub proxy: f64,
    pub l0: usize,
    pub group_norms: Vec<f64>,
    pub dist_to_optimum: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub config: OptimizerConfig,
    pub steps: Vec<StepRecord>,
    pub final_theta: Vec<f64>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn scores(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.score).collect()
    }

    pub fn proxies(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.proxy).collect()
    }

    /// Mean score of the last `n` recorded steps.
    pub fn mean_last_scores(&self, n: usize) -> Option<f64> {
        let tail = &self.steps[self.steps.len().saturating_sub(n)..];
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().map(|s| s.score).sum::<f64>() / tail.len() as f64)
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunRecord,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} completed steps)",
            self.error,
            self.partial.steps.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Gradient-mapping norm `||theta_next - theta_prev|| / alpha`.
pub fn stationarity_proxy(theta_prev: &[f64], theta_next: &[f64], alpha: f64) -> f64 {
    dist2(theta_prev, theta_next) / alpha
}

/// State before step 0: `theta0` (zeros by default), truncated once.
pub fn initial_state(
    problem: &dyn FitnessProblem,
    cfg: &OptimizerConfig,
) -> Result<OptimizerState> {
    let d = problem.dim();
    cfg.validate(d)?;
    let mut theta = cfg.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
    if let Some(ht) = cfg.ht {
        trunc_in_place(&mut theta, ht.k)?;
    }
    Ok(OptimizerState {
        last_half_step: theta.clone(),
        theta,
        t: 0,
        base_seed: cfg.base_seed,
    })
}

/// One NES(+HT) step from `state`.
pub fn step(
    state: &OptimizerState,
    problem: &dyn FitnessProblem,
    cfg: &OptimizerConfig,
) -> Result<(OptimizerState, GradientEstimate)> {
    let est = averaged_estimate(
        &state.theta,
        problem,
        &cfg.estimator,
        state.base_seed,
        state.t,
    )?;
    let half: Vec<f64> = state
        .theta
        .iter()
        .zip(&est.g)
        .map(|(th, g)| th + cfg.alpha * g)
        .collect();
    let mut next = half.clone();
    if let Some(ht) = cfg.ht {
        trunc_in_place(&mut next, ht.k)?;
    }
    if let Some(bad) = next
        .iter()
        .position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
    {
        return Err(Error::Diverged {
            step: state.t,
            reason: format!(
                "coordinate {bad} = {}; |theta_t|_2 = {:.6e}, |g|_2 = {:.6e}, alpha = {}",
                next[bad],
                norm2(&state.theta),
                norm2(&est.g),
                cfg.alpha
            ),
        });
    }
    Ok((
        OptimizerState {
            theta: next,
            t: state.t + 1,
            last_half_step: half,
            base_seed: state.base_seed,
        },
        est,
    ))
}

/// Mean return of `eval_rollouts` rollouts at `theta`, drawn from the
/// streams `(t, n, j)`, which training never uses.
pub fn evaluate(
    theta: &[f64],
    problem: &dyn FitnessProblem,
    cfg: &OptimizerConfig,
    t: u64,
) -> Result<f64> {
    let lane = cfg.estimator.population as u64;
    let returns = (1..=cfg.eval_rollouts as u64)
        .map(|j| problem.rollout(theta, &mut derive_stream(cfg.base_seed, [t, lane, j])))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&returns) / returns.len() as f64)
}

fn record_step(
    prev: &OptimizerState,
    next: &OptimizerState,
    problem: &dyn FitnessProblem,
    cfg: &OptimizerConfig,
    optimum: Option<&[f64]>,
) -> Result<StepRecord> {
    let group_size = cfg.group_size.unwrap_or(next.theta.len());
    Ok(StepRecord {
        step: prev.t,
        score: evaluate(&next.theta, problem, cfg, prev.t)?,
        proxy: stationarity_proxy(&prev.theta, &next.theta, cfg.alpha),
        l0: l0_norm(&next.theta),
        group_norms: feature_group_norms(&next.theta, group_size)?,
        dist_to_optimum: optimum.map(|o| dist2(&next.theta, o)),
    })
}

/// Receives every completed state; used for checkpointing and progress.
pub trait RunObserver {
    fn on_step(&mut self, _state: &OptimizerState, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_every` steps.
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Runs all `T` steps from the initial state.
#[allow(clippy::result_large_err)]
pub fn run(
    problem: &dyn FitnessProblem,
    cfg: &OptimizerConfig,
) -> std::result::Result<RunRecord, RunFailure> {
    run_with(problem, cfg, None, &mut ())
}

/// Runs from `start` (or the initial state) until `T` steps are completed.
#[allow(clippy::result_large_err)]
pub fn run_with(
    problem: &dyn FitnessProblem,
    cfg: &OptimizerConfig,
    start: Option<OptimizerState>,
    observer: &mut dyn RunObserver,
) -> std::result::Result<RunRecord, RunFailure> {
    let clock = Instant::now();
    let mut record = RunRecord {
        problem: problem.name(),
        config: cfg.clone(),
        steps: Vec::new(),
        final_theta: Vec::new(),
        wall_time_secs: 0.0,
    };
    let fail = |error: Error, mut partial: RunRecord, theta: &[f64]| {
        partial.final_theta = theta.to_vec();
        partial.wall_time_secs = clock.elapsed().as_secs_f64();
        RunFailure { error, partial }
    };

    let mut state = match start {
        Some(s) => match cfg.validate(problem.dim()) {
            Ok(()) if s.theta.len() == problem.dim() => s,
            Ok(()) => {
                let e = Error::DimensionMismatch {
                    expected: problem.dim(),
                    got: s.theta.len(),
                };
                return Err(fail(e, record, &s.theta));
            }
            Err(e) => return Err(fail(e, record, &s.theta)),
        },
        None => match initial_state(problem, cfg) {
            Ok(s) => s,
            Err(e) => return Err(fail(e, record, &[])),
        },
    };
    let optimum = problem.optimum();

    while state.t < cfg.iterations {
        let outcome = step(&state, problem, cfg).and_then(|(next, _)| {
            let rec = record_step(&state, &next, problem, cfg, optimum.as_deref())?;
            Ok((next, rec))
        });
        let (next, rec) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(fail(e, record, &state.theta)),
        };
        if let Err(e) = observer.on_step(&next, &rec) {
            return Err(fail(e, record, &state.theta));
        }
        record.steps.push(rec);
        state = next;
        if cfg.checkpoint_every > 0 && state.t % cfg.checkpoint_every == 0 {
            let ck = Checkpoint::new(&state, cfg);
            if let Err(e) = observer.on_checkpoint(&ck) {
                return Err(fail(e, record, &state.theta));
            }
        }
    }
    record.final_theta = state.theta;
    record.wall_time_secs = clock.elapsed().as_secs_f64();
    Ok(record)
}

/// Serializable snapshot that resumes a run bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub state: OptimizerState,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(state: &OptimizerState, cfg: &OptimizerConfig) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            config_hash: cfg.fingerprint(),
            state: state.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format_version != Self::FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// State to continue from, provided the checkpoint matches `cfg`.
    pub fn restore(self, cfg: &OptimizerConfig) -> Result<OptimizerState> {
        let want = cfg.fingerprint();
        if self.config_hash != want {
            return Err(Error::Checkpoint(format!(
                "config hash {} does not match checkpoint {}",
                want, self.config_hash
            )));
        }
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    struct Zero(usize);

    impl FitnessProblem for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn rollout(&self, _: &[f64], _: &mut RngStream) -> Result<f64> {
            Ok(0.0)
        }
        fn name(&self) -> String {
            "zero".into()
        }
    }

    struct Exploding;

    impl FitnessProblem for Exploding {
        fn dim(&self) -> usize {
            2
        }
        fn rollout(&self, _: &[f64], _: &mut RngStream) -> Result<f64> {
            Ok(1e300)
        }
        fn name(&self) -> String {
            "exploding".into()
        }
    }

    fn cfg(alpha: f64, t: u64) -> OptimizerConfig {
        OptimizerConfig::new(alpha, t, EstimatorConfig::new(1.0, 2, 1).unwrap(), 1)
    }

    #[test]
    fn proxy_examples() {
        assert_eq!(stationarity_proxy(&[1.0, 2.0], &[1.0, 2.0], 0.1), 0.0);
        let p = stationarity_proxy(&[0.0, 0.0], &[0.3, -0.4], 0.1);
        assert!((p - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let c = OptimizerConfig {
            theta0: Some(vec![3.0, -5.0, 1.0]),
            ..cfg(0.5, 1)
        };
        let s0 = initial_state(&Zero(3), &c).unwrap();
        let (s1, _) = step(&s0, &Zero(3), &c).unwrap();
        assert_eq!(s1.theta, vec![3.0, -5.0, 1.0]);
        assert_eq!(s1.t, 1);
    }

    #[test]
    fn zero_gradient_pure_truncation() {
        let c = cfg(0.5, 1).with_ht(Some(HtConfig { k: 1 }));
        let s0 = OptimizerState {
            theta: vec![3.0, -5.0, 1.0],
            t: 0,
            last_half_step: vec![3.0, -5.0, 1.0],
            base_seed: 1,
        };
        let (s1, _) = step(&s0, &Zero(3), &c).unwrap();
        assert_eq!(s1.theta, vec![0.0, -5.0, 0.0]);
        assert_eq!(s1.last_half_step, vec![3.0, -5.0, 1.0]);
    }

    #[test]
    fn theta0_is_truncated_before_step_zero() {
        let c = OptimizerConfig {
            theta0: Some(vec![3.0, -5.0, 1.0]),
            ..cfg(0.5, 1).with_ht(Some(HtConfig { k: 2 }))
        };
        assert_eq!(
            initial_state(&Zero(3), &c).unwrap().theta,
            vec![3.0, -5.0, 0.0]
        );
    }

    #[test]
    fn divergence_aborts_with_partial_record() {
        let err = run(&Exploding, &cfg(1.0, 5)).unwrap_err();
        assert!(
            matches!(err.error, Error::Diverged { step: 0, .. }),
            "{}",
            err
        );
        assert!(err.partial.steps.is_empty());
    }

    #[test]
    fn config_validation() {
        let d = 3;
        assert!(cfg(0.0, 1).validate(d).is_err());
        assert!(cfg(0.1, 0).validate(d).is_err());
        assert!(cfg(0.1, 1)
            .with_ht(Some(HtConfig { k: 4 }))
            .validate(d)
            .is_err());
        assert!(cfg(0.1, 1)
            .with_ht(Some(HtConfig { k: 0 }))
            .validate(d)
            .is_err());
        let bad_theta0 = OptimizerConfig {
            theta0: Some(vec![0.0; 2]),
            ..cfg(0.1, 1)
        };
        assert!(bad_theta0.validate(d).is_err());
        assert!(cfg(0.1, 1).validate(d).is_ok());
    }

    #[test]
    fn checkpoint_rejects_foreign_config() {
        let c = cfg(0.1, 3);
        let s = initial_state(&Zero(2), &c).unwrap();
        let ck = Checkpoint::from_json(&Checkpoint::new(&s, &c).to_json()).unwrap();
        assert!(ck.clone().restore(&cfg(0.2, 3)).is_err());
        assert_eq!(ck.restore(&c).unwrap(), s);
        assert!(Checkpoint::from_json("{\"bogus\": 1}").is_err());
    }
}
