//! Experiment driver: configuration, system runs, KPIs and CSV output.

mod cell;
pub mod config;
mod experiment;
pub mod kpi;
mod output;

pub use cell::{EventRecord, RunOutput, SystemSim, UeReport};
pub use config::{DrxMode, ExperimentConfig, RationalValue};
pub use experiment::{run_experiment, ExperimentResult, LoadSummary};
pub use output::{write_outputs, OutputFiles};
