//! Command-line front end and experiment harness for sensor parameter
//! identification: computes minimal sensor query rates or loosest sensor
//! covariances meeting a trajectory-estimation accuracy target, and
//! validates them end-to-end in simulation.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;

pub use commands::{CommandError, CommandOutcome};
pub use config::ExperimentConfig;
pub use experiment::SweepKind;
