use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HarnessError>,
    },

    #[error(transparent)]
    Core(#[from] cdbench_core::Error),

    #[error(transparent)]
    Nn(#[from] cdbench_nn::NnError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("TOML error in {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("plot error: {0}")]
    Plot(String),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: impl Into<String>, source: HarnessError) -> Self {
        HarnessError::Stage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }

    /// Whether the failure stems from the user's configuration rather than a
    /// running stage.
    pub fn is_config(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Toml { .. } => true,
            HarnessError::Core(e) => matches!(e, cdbench_core::Error::Config(_) | cdbench_core::Error::Toml(_)),
            HarnessError::Nn(cdbench_nn::NnError::Config(_)) => true,
            HarnessError::Nn(cdbench_nn::NnError::Core(e)) => matches!(e, cdbench_core::Error::Config(_)),
            _ => false,
        }
    }
}
