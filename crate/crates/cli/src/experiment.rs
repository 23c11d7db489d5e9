//! Runs and sweeps: one optimizer run per (sparsity arm, seed), executed on a
//! shared worker pool and persisted under a [`Layout`].

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nesht_core::{
    run_with, Checkpoint, FitnessProblem, OptimizerConfig, OptimizerState, RunObserver, StepRecord,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode, Sparsity};
use crate::error::HarnessError;
use crate::metrics::{mean_last, support_metrics};
use crate::output::{
    read_trajectory, summary_csv, trajectory_header, trajectory_line, vector_csv, write_atomic,
    Heatmap, Layout, SummaryRow,
};

/// Scores averaged for the summary's `mean_last_10`.
pub const SCORE_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub id: String,
    pub arm: Sparsity,
    pub seed: u64,
}

pub fn run_specs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let name = cfg.problem_name();
    let name = name.as_str();
    cfg.arms()
        .into_iter()
        .flat_map(|arm| {
            cfg.seeds.iter().map(move |&seed| RunSpec {
                id: format!("{name}_{}_seed{seed}", arm.label()),
                arm,
                seed,
            })
        })
        .collect()
}

impl ExperimentConfig {
    pub fn problem_name(&self) -> String {
        self.problem
            .build(self.seeds[0])
            .map(|p| p.name())
            .unwrap_or_default()
    }
}

/// Appends trajectory rows and writes checkpoints as the run progresses.
struct Persist<'a> {
    rows: BufWriter<File>,
    layout: &'a Layout,
    id: &'a str,
}

impl RunObserver for Persist<'_> {
    fn on_step(&mut self, _state: &OptimizerState, record: &StepRecord) -> nesht_core::Result<()> {
        self.rows
            .write_all(trajectory_line(record).as_bytes())
            .map_err(|e| nesht_core::Error::Checkpoint(e.to_string()))
    }

    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) -> nesht_core::Result<()> {
        // Rows must be durable before the checkpoint that refers to them.
        self.rows
            .flush()
            .map_err(|e| nesht_core::Error::Checkpoint(e.to_string()))?;
        write_atomic(
            &self.layout.checkpoint(self.id),
            checkpoint.to_json().as_bytes(),
        )
        .map_err(|e| nesht_core::Error::Checkpoint(e.to_string()))
    }
}

/// Keeps the header and the first `steps` rows of a partial trajectory.
fn truncate_partial(path: &Path, steps: u64) -> Result<(), HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if i as u64 > steps {
            break;
        }
        kept.push_str(&line);
        kept.push('\n');
    }
    if (kept.lines().count() as u64) < steps + 1 {
        return Err(HarnessError::io(
            path,
            "partial trajectory shorter than checkpoint",
        ));
    }
    fs::write(path, kept).map_err(|e| HarnessError::io(path, e))
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: SummaryRow,
    pub wall_time_secs: f64,
}

pub type BuiltRun = (Box<dyn FitnessProblem>, OptimizerConfig, Option<usize>);

/// Problem instance, validated optimizer config and HT capacity of one run.
pub fn build_run(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<BuiltRun, HarnessError> {
    let opt = cfg
        .optimizer
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing optimizer section".into()))?;
    let problem = cfg.problem.build(spec.seed)?;
    let dim = problem.dim();
    let k = spec.arm.capacity(dim)?;
    let mut core = opt.to_core(k, spec.seed);
    if core.group_size.is_none() {
        core.group_size = cfg.problem.real_width();
    }
    core.validate(dim).map_err(HarnessError::from_core_config)?;
    Ok((problem, core, k))
}

/// Executes one run. With `resume`, continues from its checkpoint if present.
pub fn execute_run(
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    layout: &Layout,
    resume: bool,
) -> Result<RunOutcome, HarnessError> {
    let (problem, core, k) = build_run(cfg, spec)?;
    let dim = problem.dim();
    let groups = dim.div_ceil(core.group_size.unwrap_or(dim));

    let part = layout.partial_trajectory(&spec.id);
    let ck_path = layout.checkpoint(&spec.id);
    let dir = part.parent().expect("runs dir");
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;

    let start = if resume && ck_path.exists() && part.exists() {
        let text = fs::read_to_string(&ck_path).map_err(|e| HarnessError::io(&ck_path, e))?;
        let state = Checkpoint::from_json(&text)
            .and_then(|c| c.restore(&core))
            .map_err(|e| HarnessError::Config(format!("{}: {e}", ck_path.display())))?;
        truncate_partial(&part, state.t)?;
        Some(state)
    } else {
        fs::write(&part, trajectory_header(groups)).map_err(|e| HarnessError::io(&part, e))?;
        None
    };
    let file = OpenOptions::new()
        .append(true)
        .open(&part)
        .map_err(|e| HarnessError::io(&part, e))?;
    let mut observer = Persist {
        rows: BufWriter::new(file),
        layout,
        id: &spec.id,
    };
    let outcome = run_with(problem.as_ref(), &core, start, &mut observer);
    observer
        .rows
        .flush()
        .map_err(|e| HarnessError::io(&part, e))?;
    drop(observer);
    let record = outcome.map_err(|f| HarnessError::Run {
        run: spec.id.clone(),
        source: f.error,
    })?;

    let traj = layout.trajectory(&spec.id);
    fs::rename(&part, &traj).map_err(|e| HarnessError::io(&traj, e))?;
    write_atomic(
        &layout.final_theta(&spec.id),
        vector_csv(&record.final_theta).as_bytes(),
    )?;
    let rows = read_trajectory(&traj)?;
    if core.group_size.is_some() {
        write_atomic(
            &layout.heatmap(&spec.id),
            Heatmap::from_trajectory(&rows).to_csv().as_bytes(),
        )?;
    }
    let summary = summarize(
        spec,
        &problem.name(),
        dim,
        k,
        &rows,
        &record.final_theta,
        problem.relevant_support().as_deref(),
    )?;
    Ok(RunOutcome {
        summary,
        wall_time_secs: record.wall_time_secs,
    })
}

/// Summary row computed only from persisted artifacts.
pub fn summarize(
    spec: &RunSpec,
    problem: &str,
    dim: usize,
    k: Option<usize>,
    rows: &[crate::output::TrajectoryRow],
    final_theta: &[f64],
    truth: Option<&[usize]>,
) -> Result<SummaryRow, HarnessError> {
    let last = rows
        .last()
        .ok_or_else(|| HarnessError::Runtime(format!("{}: empty trajectory", spec.id)))?;
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let metrics = truth
        .filter(|s| !s.is_empty())
        .map(|s| support_metrics(final_theta, s));
    Ok(SummaryRow {
        run: spec.id.clone(),
        problem: problem.to_string(),
        arm: spec.arm.label(),
        beta: spec.arm.beta(dim),
        k,
        seed: spec.seed,
        final_score: last.score,
        mean_last_10: mean_last(&scores, SCORE_WINDOW).expect("non-empty"),
        support_recall: metrics.map(|m| m.0),
        support_precision: metrics.map(|m| m.1),
        final_proxy: last.proxy,
        final_dist: last.dist_to_optimum,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    schema_version: u32,
    mode: &'static str,
    config_sha256: String,
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    runs: Vec<&'a str>,
    evaluation: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs every (arm, seed) pair and writes the summary, timings and manifest.
/// Failed runs are reported after all others have finished.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    layout: &Layout,
    resume: bool,
) -> Result<Vec<SummaryRow>, HarnessError> {
    debug_assert!(matches!(cfg.mode, Mode::Run | Mode::Sweep));
    let specs = run_specs(cfg);
    let results: Vec<Result<RunOutcome, HarnessError>> = specs
        .par_iter()
        .map(|s| execute_run(cfg, s, layout, resume))
        .collect();

    let mut rows = Vec::new();
    let mut timings = String::from("run,wall_time_secs\n");
    let mut first_error = None;
    for (spec, res) in specs.iter().zip(results) {
        match res {
            Ok(o) => {
                timings.push_str(&format!("{},{}\n", spec.id, o.wall_time_secs));
                rows.push(o.summary);
            }
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(e) => eprintln!("{}", e.to_json()),
        }
    }
    write_atomic(&layout.summary(), summary_csv(&rows).as_bytes())?;
    write_atomic(&layout.timings(), timings.as_bytes())?;
    let eval_rollouts = cfg.optimizer.as_ref().map_or(0, |o| o.eval_rollouts);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        schema_version: cfg.schema_version,
        mode: cfg.mode.as_str(),
        config_sha256: sha256_hex(config_bytes),
        config: cfg,
        seeds: &cfg.seeds,
        runs: specs.iter().map(|s| s.id.as_str()).collect(),
        evaluation: format!(
            "every step, mean of {eval_rollouts} held-out rollouts; mean_last_10 averages the last {SCORE_WINDOW} evaluations"
        ),
    };
    write_atomic(
        &layout.manifest(),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}
