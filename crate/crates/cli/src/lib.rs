//! Experiment harness: JSON configs, seed sweeps over sparsity arms,
//! CSV/JSON artifacts and theory checks.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod theory_check;

pub use config::{ExperimentConfig, Mode, ProblemSpec, Sparsity};
pub use error::HarnessError;
pub use experiment::{run_experiment, run_specs, RunSpec};
pub use metrics::support_metrics;
pub use output::{Heatmap, Layout, SummaryRow};
