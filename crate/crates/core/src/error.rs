use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("index {index} out of range for {what} of length {len}")]
    Index {
        what: String,
        index: usize,
        len: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch for {role}: expected {expected}, got {actual}")]
    Contract {
        role: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite loss in component `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("frame index {got} is not after last processed frame {last}")]
    Sequencing { last: usize, got: usize },

    #[error("export error: {0}")]
    Export(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
