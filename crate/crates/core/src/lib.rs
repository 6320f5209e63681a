//! Causal generative process, dataset generation and disentanglement metrics
//! (IRS, UC, CG, DCI-D) for confounded image datasets.

pub mod batch;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod presets;
pub mod scm;

pub use error::{Error, Result};
pub use batch::ImageBatch;
