//! Config-driven experiment pipeline: dataset generation, oracle and model
//! training, scoring, and result tables, with a content-addressed cache.

pub mod cache;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod table;

pub use cache::{Cache, Stage};
pub use config::{ExperimentConfig, MetricKind};
pub use error::{HarnessError, Result};
pub use pipeline::{evaluate, export_latents, run_experiment, EvalOptions, Runner};
pub use table::{emit_table, ResultTable, TableLayout};
