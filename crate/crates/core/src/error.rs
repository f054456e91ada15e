use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("backward called before forward: node {0} has not been computed")]
    BackwardBeforeForward(usize),

    #[error("backward requires a scalar output, node {node} has shape {shape:?}")]
    NonScalarOutput { node: usize, shape: Vec<usize> },

    #[error("function is not deterministic under a fixed seed")]
    NonDeterministic,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{source_name}: {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    Divergence { epoch: usize, step: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
