use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("vertex id {id} out of range (num_vertices = {n})")]
    VertexOutOfRange { id: usize, n: usize },

    #[error("feature rows ({rows}) do not match num_vertices ({n})")]
    FeatureRows { rows: usize, n: usize },

    #[error("invalid binary graph: {0}")]
    BadBinary(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing retained activation for layer {0}")]
    MissingActivation(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
