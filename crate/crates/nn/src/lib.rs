//! Latent-variable models, their training loop and the factor oracle
//! classifier, on a CPU tensor backend.

pub mod adam;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod losses;
pub mod params;
pub mod train;
pub mod vae;

pub use classifier::{train_classifier, Classifier, ClassifierConfig};
pub use data::{Geometry, TrainingSet};
pub use error::{NnError, Result};
pub use train::{load_model, train, TrainConfig, TrainOutcome};
pub use vae::{BaseVariant, LatentCode, Vae, VariantSpec};
