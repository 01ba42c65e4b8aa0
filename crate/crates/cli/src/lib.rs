//! Experiment harness: runs ride-match search approaches over a workload at
//! several load levels and reports matching utility, time and routing cost.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{Approach, ExperimentConfig};
pub use experiment::run_experiment;
pub use report::{ExperimentReport, ReportFormat, ReportRow};
