//! `theory-check` and `variance-probe` modes: Monte Carlo measurements
//! compared with the analytical bounds, written as plot-ready tables.

use nesht_core::estimator::mean_and_se;
use nesht_core::rng::domain::HARNESS as POINT_DOMAIN;
use nesht_core::theory::{
    lipschitz_probe, smoothing_oracle, smoothness_constant, variance_bound, GradientSource,
    ProbeConfig,
};
use nesht_core::{
    averaged_estimate, empirical_estimator_variance, EstimatorConfig, FitnessProblem, RngStream,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, TheorySection, VarianceProbeSection};
use crate::error::HarnessError;
use crate::output::{fmt_f64, write_atomic, Layout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub check: &'static str,
    pub point: usize,
    pub population: usize,
    pub rollouts: usize,
    pub measured: f64,
    pub bound: f64,
    pub se: f64,
    pub status: Status,
    pub note: String,
}

impl CheckRow {
    fn skip(check: &'static str, note: &str) -> Self {
        Self {
            check,
            point: 0,
            population: 0,
            rollouts: 0,
            measured: f64::NAN,
            bound: f64::NAN,
            se: f64::NAN,
            status: Status::Skip,
            note: note.into(),
        }
    }
}

fn points(dim: usize, count: usize, half_width: f64, seed: u64) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|p| {
            let mut rng = RngStream::in_domain(POINT_DOMAIN, seed, [p, 0, 0]);
            (0..dim)
                .map(|_| half_width * (2.0 * rng.uniform() - 1.0))
                .collect()
        })
        .collect()
}

/// Gradient and per-coordinate standard error.
type GradientWithSe = (Vec<f64>, Vec<f64>);

/// Smoothed gradient at `theta` with its per-coordinate standard error.
fn reference_gradient(
    problem: &dyn FitnessProblem,
    theta: &[f64],
    sigma: f64,
    oracle_samples: Option<usize>,
    seed: u64,
) -> Result<Option<GradientWithSe>, HarnessError> {
    if let Some((_, g)) = problem.exact_smoothed(theta, sigma) {
        let zeros = vec![0.0; g.len()];
        return Ok(Some((g, zeros)));
    }
    match oracle_samples {
        Some(m) => {
            let o = smoothing_oracle(problem, theta, sigma, m, 1, seed).map_err(runtime)?;
            Ok(Some((o.grad, o.grad_se)))
        }
        None => Ok(None),
    }
}

fn runtime(e: nesht_core::Error) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Largest sample variance of single rollouts over the evaluation points.
fn measured_c(
    problem: &dyn FitnessProblem,
    pts: &[Vec<f64>],
    seed: u64,
) -> Result<f64, HarnessError> {
    let mut worst: f64 = 0.0;
    for (p, theta) in pts.iter().enumerate() {
        let xs = (0..4000u64)
            .map(|j| {
                problem.rollout(
                    theta,
                    &mut RngStream::in_domain(POINT_DOMAIN, seed, [p as u64, 1, j]),
                )
            })
            .collect::<nesht_core::Result<Vec<f64>>>()
            .map_err(runtime)?;
        let (_, se) = mean_and_se(&xs);
        worst = worst.max(se * se * xs.len() as f64);
    }
    Ok(worst)
}

pub fn theory_check(
    problem: &dyn FitnessProblem,
    t: &TheorySection,
    seed: u64,
) -> Result<Vec<CheckRow>, HarnessError> {
    let d = problem.dim();
    let pts = points(d, t.points, t.box_half_width, seed);
    let mut rows = Vec::new();

    // Unbiasedness of the averaged estimator with n = N = 1.
    let single = EstimatorConfig::new(t.sigma, 1, 1).map_err(runtime)?;
    for (p, theta) in pts.iter().enumerate() {
        let Some((truth, truth_se)) =
            reference_gradient(problem, theta, t.sigma, t.oracle_samples, seed ^ p as u64)?
        else {
            rows.push(CheckRow::skip(
                "unbiasedness",
                "no closed form and no oracle_samples",
            ));
            break;
        };
        let samples = (0..t.unbiased_samples as u64)
            .map(|r| averaged_estimate(theta, problem, &single, seed, r).map(|e| e.g))
            .collect::<nesht_core::Result<Vec<_>>>()
            .map_err(runtime)?;
        let mut worst = (0.0, 0.0, 0.0);
        for c in 0..d {
            let xs: Vec<f64> = samples.iter().map(|g| g[c]).collect();
            let (mean, se) = mean_and_se(&xs);
            let se = se.hypot(truth_se[c]);
            let z = if se > 0.0 {
                (mean - truth[c]).abs() / se
            } else {
                0.0
            };
            if z >= worst.0 {
                worst = (z, (mean - truth[c]).abs(), se);
            }
        }
        rows.push(CheckRow {
            check: "unbiasedness",
            point: p,
            population: 1,
            rollouts: 1,
            measured: worst.1,
            bound: 4.0 * worst.2,
            se: worst.2,
            status: if worst.0 <= 4.0 {
                Status::Pass
            } else {
                Status::Fail
            },
            note: "largest per-coordinate |mean - grad F_sigma|; bound is 4 SE".into(),
        });
    }

    let Some(b) = problem.bound_b() else {
        rows.push(CheckRow::skip("variance_bound", "problem has no bound B"));
        rows.push(CheckRow::skip("lipschitz", "problem has no bound B"));
        return Ok(rows);
    };
    let (c, c_note) = match (t.var_c, problem.var_bound_c()) {
        (Some(c), _) => (c, "configured C"),
        (None, Some(c)) => (c, "declared C"),
        (None, None) => (measured_c(problem, &pts, seed)?, "measured C"),
    };

    for (p, theta) in pts.iter().enumerate() {
        let reference =
            reference_gradient(problem, theta, t.sigma, t.oracle_samples, seed ^ p as u64)?;
        let Some((truth, _)) = reference else {
            rows.push(CheckRow::skip("variance_bound", "no reference gradient"));
            break;
        };
        for &n in &t.populations {
            for &big_n in &t.rollouts {
                let cfg = EstimatorConfig::new(t.sigma, n, big_n).map_err(runtime)?;
                let v = empirical_estimator_variance(
                    theta,
                    problem,
                    &cfg,
                    seed ^ ((p as u64) << 20),
                    t.variance_reps,
                    Some(&truth),
                )
                .map_err(runtime)?;
                let bound =
                    variance_bound(c, b, d, t.sigma, n as u64, big_n as u64).map_err(runtime)?;
                rows.push(CheckRow {
                    check: "variance_bound",
                    point: p,
                    population: n,
                    rollouts: big_n,
                    measured: v.value,
                    bound,
                    se: v.se,
                    status: if v.value <= bound + 3.0 * v.se {
                        Status::Pass
                    } else {
                        Status::Fail
                    },
                    note: format!("{c_note} = {}", fmt_f64(c)),
                });
            }
        }
    }

    let gradient = if problem.exact_smoothed(&pts[0], t.sigma).is_some() {
        GradientSource::Exact
    } else if let Some(samples) = t.oracle_samples {
        GradientSource::MonteCarlo {
            samples,
            inner_rollouts: 1,
        }
    } else {
        rows.push(CheckRow::skip("lipschitz", "no reference gradient"));
        return Ok(rows);
    };
    let probe = ProbeConfig {
        pairs: t.lipschitz_pairs,
        box_half_width: t.box_half_width,
        gradient,
        seed,
    };
    let report = lipschitz_probe(problem, t.sigma, &probe).map_err(runtime)?;
    let l = smoothness_constant(b, d, t.sigma).map_err(runtime)?;
    rows.push(CheckRow {
        check: "lipschitz",
        point: 0,
        population: 0,
        rollouts: 0,
        measured: report.max_ratio,
        bound: l,
        se: report.max_ratio_se,
        status: if report.max_ratio <= l + 5.0 * report.max_ratio_se {
            Status::Pass
        } else {
            Status::Fail
        },
        note: format!("max over {} pairs", report.pairs.len()),
    });
    Ok(rows)
}

pub fn check_table(rows: &[CheckRow]) -> String {
    let mut s = String::from("check,point,population,rollouts,measured,bound,se,status,note\n");
    for r in rows {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},\"{}\"\n",
            r.check,
            r.point,
            r.population,
            r.rollouts,
            fmt_f64(r.measured),
            fmt_f64(r.bound),
            fmt_f64(r.se),
            status,
            r.note.replace('"', "'"),
        ));
    }
    s
}

/// Runs the checks, writes `theory_check.csv`/`.json`, and fails with exit
/// code 4 when any check fails.
pub fn run_theory_check(
    cfg: &ExperimentConfig,
    layout: &Layout,
) -> Result<Vec<CheckRow>, HarnessError> {
    let t = cfg
        .theory
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing theory section".into()))?;
    let seed = cfg.seeds[0];
    let problem = cfg.problem.build(seed)?;
    let rows = theory_check(problem.as_ref(), t, seed)?;
    let table = check_table(&rows);
    write_atomic(&layout.root.join("theory_check.csv"), table.as_bytes())?;
    write_atomic(
        &layout.root.join("theory_check.json"),
        serde_json::to_string_pretty(&rows)
            .expect("rows serialize")
            .as_bytes(),
    )?;
    let failed = rows.iter().filter(|r| r.status == Status::Fail).count();
    if failed > 0 {
        return Err(HarnessError::TheoryCheck { failed });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub sigma: f64,
    pub population: usize,
    pub rollouts: usize,
    pub point: usize,
    pub measured: f64,
    pub se: f64,
    pub bound: Option<f64>,
}

pub fn variance_probe(
    problem: &dyn FitnessProblem,
    v: &VarianceProbeSection,
    seed: u64,
) -> Result<Vec<ProbeRow>, HarnessError> {
    let d = problem.dim();
    let pts = points(d, v.points, v.box_half_width, seed);
    let mut rows = Vec::new();
    for &sigma in &v.sigmas {
        for (p, theta) in pts.iter().enumerate() {
            let truth = problem
                .exact_smoothed(theta, sigma)
                .ok_or_else(|| {
                    HarnessError::Config(
                        "variance-probe needs a closed-form smoothed gradient".into(),
                    )
                })?
                .1;
            for &n in &v.populations {
                for &big_n in &v.rollouts {
                    let cfg = EstimatorConfig::new(sigma, n, big_n).map_err(runtime)?;
                    let m = empirical_estimator_variance(
                        theta,
                        problem,
                        &cfg,
                        seed,
                        v.reps,
                        Some(&truth),
                    )
                    .map_err(runtime)?;
                    let bound = match (problem.bound_b(), problem.var_bound_c()) {
                        (Some(b), Some(c)) => Some(
                            variance_bound(c, b, d, sigma, n as u64, big_n as u64)
                                .map_err(runtime)?,
                        ),
                        _ => None,
                    };
                    rows.push(ProbeRow {
                        sigma,
                        population: n,
                        rollouts: big_n,
                        point: p,
                        measured: m.value,
                        se: m.se,
                        bound,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn run_variance_probe(
    cfg: &ExperimentConfig,
    layout: &Layout,
) -> Result<Vec<ProbeRow>, HarnessError> {
    let v = cfg
        .variance_probe
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing variance_probe section".into()))?;
    let seed = cfg.seeds[0];
    let problem = cfg.problem.build(seed)?;
    let rows = variance_probe(problem.as_ref(), v, seed)?;
    let mut s = String::from("sigma,population,rollouts,point,measured,se,bound\n");
    for r in &rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(r.sigma),
            r.population,
            r.rollouts,
            r.point,
            fmt_f64(r.measured),
            fmt_f64(r.se),
            r.bound.map(fmt_f64).unwrap_or_default()
        ));
    }
    write_atomic(&layout.root.join("variance_probe.csv"), s.as_bytes())?;
    Ok(rows)
}
