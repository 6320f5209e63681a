use std::path::PathBuf;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Core(#[from] cdbench_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} ({term}); last good checkpoint kept")]
    NonFinite { step: usize, term: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NnError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<NnError> for cdbench_core::Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Core(inner) => inner,
            other => cdbench_core::Error::Backend(other.to_string()),
        }
    }
}
