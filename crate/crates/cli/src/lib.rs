//! Configuration, orchestration and plotting for dislocore experiments.

pub mod config;
pub mod experiment;
pub mod svg;

pub use config::{Case, ExperimentConfig, PotentialConfig};
pub use experiment::{run_experiment, Outcome, Plan, Summary};
