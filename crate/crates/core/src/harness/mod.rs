//! Monte Carlo experiment engine.

pub mod experiment;
pub mod presets;
pub mod stats;
pub mod trial;

pub use experiment::{
    aggregate, run_experiment, write_outputs, AggregateRow, ExperimentReport, ExperimentSpec, PointResult,
    RunOptions, SweepVar, Variant,
};
pub use stats::Moments;
pub use trial::{
    absorbed_order, cfo_absorbed_baseline, channel_nmse, run_trial, simulate_received, trial_rng, TrialContext,
    TrialOptions, TrialOutput, TrialRecord, UserRecord,
};
