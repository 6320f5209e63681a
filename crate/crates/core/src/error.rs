use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("enumeration needs {required} assignments but the cap is {cap}")]
    Size { required: u128, cap: u128 },

    #[error("graph admits no valid assignment")]
    Unsatisfiable,

    #[error("assignment violates rule `{0}`")]
    Constraint(String),

    #[error("conditioning removed every record")]
    EmptyFilter,

    #[error("factor `{0}` takes a single value across the dataset")]
    UndefinedFactor(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("oracle accuracy {accuracy:.3} on factor `{factor}` is below the floor {floor:.3}")]
    InvalidOracle {
        factor: String,
        accuracy: f64,
        floor: f64,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on record `{id}` ({path}): {source}")]
    RecordIo {
        id: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("model backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
