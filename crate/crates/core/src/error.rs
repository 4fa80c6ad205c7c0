use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("utterance {id:?}: label {label} out of range for alphabet size {alphabet_size}")]
    LabelOutOfRange {
        id: String,
        label: u32,
        alphabet_size: u32,
    },

    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),

    #[error("alphabet/order mismatch: {0}")]
    Mismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gram space {alphabet_size}^{order} does not fit in a 128-bit key")]
    GramSpaceTooLarge { alphabet_size: u32, order: usize },

    #[error("distribution has zero mass (total = 0 and alpha = 0)")]
    ZeroMass,

    #[error("divergence undefined: gram {gram:?} has p = {p} but q = 0")]
    DivergenceUndefined { gram: Vec<u32>, p: f64 },

    #[error("audio error for {id:?}: {message}")]
    Audio { id: String, message: String },

    #[error("instance too large for exhaustive search: {0}")]
    OracleLimit(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
