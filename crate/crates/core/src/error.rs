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

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("probability vector at line {line} sums to {sum} (|sum - 1| exceeds {tolerance})")]
    Normalization { line: usize, sum: f64, tolerance: f64 },

    #[error("no region pseudo-labeled as class {class}")]
    EmptyClass { class: usize },

    #[error("unknown image id `{0}`")]
    UnknownId(String),

    #[error("budget {budget} outside [1, {available}]")]
    Budget { budget: usize, available: usize },

    #[error("image `{0}` has no feature vector")]
    MissingFeature(String),

    #[error("subset is empty")]
    EmptySubset,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }
}
