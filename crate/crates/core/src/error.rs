use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid observation set: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch on {axis}: {message}")]
    Shape { axis: String, message: String },

    #[error("index ({s}, {p}, {t}) out of range for dims {dims:?}")]
    IndexOutOfRange {
        s: usize,
        p: usize,
        t: usize,
        dims: [usize; 3],
    },

    #[error("empty observation set")]
    EmptySet,

    #[error("training diverged at epoch {epoch}: objective is {value}")]
    Divergence { epoch: usize, value: f64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed checkpoint document: {0}")]
    Malformed(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(axis: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            axis: axis.into(),
            message: message.into(),
        }
    }
}
