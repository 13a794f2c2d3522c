//! Experiment orchestration: configuration, per-framework pipelines and
//! SNR × seed sweeps.

pub mod config;
pub mod estimator;
pub mod pipeline;
pub mod sweep;

pub use config::{ExperimentConfig, Framework, TimingConfig, OUT_DIR_ENV};
pub use pipeline::{channel_seed, run_cell, run_gscm, run_imagecom, Prepared, RunRecord};
pub use sweep::{sweep, SweepOutcome};
