//! Experiment orchestration: configuration, seeded replications, regret
//! traces and the acceptance checks.

pub mod checks;
pub mod config;
pub mod run;
pub mod trace;

pub use config::{EnvironmentOverrides, ExperimentConfig, FixtureKind, LearnerKind};
pub use run::{oracle_value, run_experiment, run_replication, ExperimentOutcome};
pub use trace::{emit_csv, RegretTrace, Summary};
