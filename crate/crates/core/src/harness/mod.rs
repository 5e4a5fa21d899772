//! Experiment harness: configuration, theory constants, batches and artifacts.

pub mod batch;
pub mod config;
pub mod constants;
pub mod output;

pub use batch::{run_batch, BatchOptions, EpisodeOutcome, HorizonSummary, ScalingReport};
pub use config::{ExperimentConfig, Prepared};
pub use constants::{compute_theory_constants, theory_inputs, TheoryConstants, TheoryInputs};
