//! Monte Carlo experiments over vehicle density, with CSV output.

mod config;
pub mod report;
mod runner;
mod scenario;

pub use config::{ExperimentConfig, ReflectorConfig, SceneConfig};
pub use report::{read_raw_file, summarize, AggregateReport, DensityRow, RawRow, RunFailure, TimeRow};
pub use runner::{run_experiment, run_single, simulate};
pub use scenario::{build_scenario, run_seed};
