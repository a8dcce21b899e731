//! Config-driven experiment grids: seeds × methods × surrogates × dimensions, with
//! checkpointed metric traces indexed by model evaluations.

pub mod config;
pub mod output;
pub mod presets;
pub mod runner;

pub use config::{log_checkpoints, Method, ProblemConfig, ReferenceConfig, RunConfig, SurrogateConfig, Sweep};
pub use presets::{preset, PRESETS};
pub use runner::{prepare_setting, run_experiment, run_seed, run_sweep, RunRecord, SeedOutcome, Setting};
