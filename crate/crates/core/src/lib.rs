//! Zeroth-order maximization of noisy, possibly discontinuous fitness
//! functions under an L0 constraint: natural evolution strategies whose
//! iterate is hard-thresholded to its `k` largest coordinates after every
//! step, plus calculators and Monte Carlo oracles for the accompanying
//! smoothness, variance and budget constants.

pub mod error;
pub mod estimator;
pub mod ht;
pub mod optimizer;
pub mod problem;
pub mod problems;
pub mod reduce;
pub mod rng;
pub mod theory;
pub mod vector;

pub use error::{Error, Result};
pub use estimator::{
    averaged_estimate, empirical_estimator_variance, sample_perturbation, single_estimate,
    EstimatorConfig, GradientEstimate, VarianceMeasurement,
};
pub use ht::{k_from_ratio, trunc, HtConfig};
pub use optimizer::{
    run, run_with, stationarity_proxy, Checkpoint, OptimizerConfig, OptimizerState, RunFailure,
    RunObserver, RunRecord, StepRecord,
};
pub use problem::{
    augment_with_noise, sparse_reward_mask, Episodic, FitnessProblem, LinearEnv, NoiseAugmented,
    RewardMasked,
};
pub use rng::{derive_stream, RngStream, StreamKey};
pub use vector::{feature_group_norms, l0_norm, ParamVector, SparsityMask};
