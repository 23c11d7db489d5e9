//! Command-line front end. Errors go to stderr as one JSON object and map
//! to the exit codes of [`HarnessError::exit_code`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Mode};
use crate::error::HarnessError;
use crate::experiment::run_experiment;
use crate::output::Layout;
use crate::theory_check::{run_theory_check, run_variance_probe, Status};

pub const OUT_ENV: &str = "NESHT_OUT";
const DEFAULT_OUT: &str = "nesht-out";

#[derive(Debug, Parser)]
#[command(
    name = "nesht",
    version,
    about = "NES with hard thresholding: experiments and theory checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single sparsity arm over the configured seeds.
    Run(CommonArgs),
    /// Every sparsity arm over every seed.
    Sweep(CommonArgs),
    /// Unbiasedness, variance and smoothness checks against their bounds.
    TheoryCheck(CommonArgs),
    /// Empirical estimator variance over a (sigma, n, N) grid.
    VarianceProbe(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    pub config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    pub seed_override: Option<u64>,
    /// Cap on worker threads (defaults to all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; falls back to the config's output_dir, then $NESHT_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue interrupted runs from their checkpoints.
    #[arg(long)]
    pub resume: bool,
}

impl Command {
    fn parts(&self) -> (Mode, &CommonArgs) {
        match self {
            Command::Run(a) => (Mode::Run, a),
            Command::Sweep(a) => (Mode::Sweep, a),
            Command::TheoryCheck(a) => (Mode::TheoryCheck, a),
            Command::VarianceProbe(a) => (Mode::VarianceProbe, a),
        }
    }
}

fn output_dir(args: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load(
    path: &Path,
    seed_override: Option<u64>,
) -> Result<(ExperimentConfig, Vec<u8>), HarnessError> {
    let (mut cfg, bytes) = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok((cfg, bytes))
}

pub fn execute(cmd: &Command) -> Result<(), HarnessError> {
    let (mode, args) = cmd.parts();
    let (cfg, bytes) = load(&args.config, args.seed_override)?;
    if cfg.mode != mode {
        return Err(HarnessError::Config(format!(
            "config mode is {} but the command is {}",
            cfg.mode.as_str(),
            mode.as_str()
        )));
    }
    if args.workers == Some(0) {
        return Err(HarnessError::Config("--workers must be >= 1".into()));
    }
    let layout = Layout::new(output_dir(args, &cfg));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;

    pool.install(|| match mode {
        Mode::Run | Mode::Sweep => {
            let rows = run_experiment(&cfg, &bytes, &layout, args.resume)?;
            for r in &rows {
                println!(
                    "{:<40} final {:>12.6} last10 {:>12.6} proxy {:>10.4}{}",
                    r.run,
                    r.final_score,
                    r.mean_last_10,
                    r.final_proxy,
                    match (r.support_recall, r.support_precision) {
                        (Some(rc), Some(pr)) => format!(" recall {rc:.3} precision {pr:.3}"),
                        _ => String::new(),
                    }
                );
            }
            println!("wrote {}", layout.summary().display());
            Ok(())
        }
        Mode::TheoryCheck => {
            let result = run_theory_check(&cfg, &layout);
            let table = std::fs::read_to_string(layout.root.join("theory_check.csv")).ok();
            if let Some(t) = table {
                print!("{t}");
            }
            result.map(|rows| {
                let skipped = rows.iter().filter(|r| r.status == Status::Skip).count();
                println!(
                    "all {} checks passed ({skipped} skipped)",
                    rows.len() - skipped
                );
            })
        }
        Mode::VarianceProbe => {
            let rows = run_variance_probe(&cfg, &layout)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                layout.root.join("variance_probe.csv").display()
            );
            Ok(())
        }
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
