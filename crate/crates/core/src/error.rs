use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant family onto
/// an exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("illegal residue {ch:?} at position {position}")]
    IllegalResidue { ch: char, position: usize },

    #[error("weight archive has bad magic")]
    BadMagic,

    #[error("weight archive truncated payload: {0}")]
    Truncated(String),

    #[error("weight archive shape mismatch for {name}: manifest {manifest:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        manifest: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("empty result: {0}")]
    Empty(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 input/config, 3 numeric or verification failure, 4 empty result.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Check(_) => 3,
            Error::Empty(_) => 4,
            _ => 2,
        }
    }
}
