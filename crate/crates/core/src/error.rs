use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading a serialized surrogate.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightFileError {
    #[error("bad magic header (not a surrogate weight file)")]
    BadMagic,
    #[error("unsupported weight file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("weight file truncated")]
    Truncated,
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {0} is not a leaf and cannot be expanded")]
    NotALeaf(usize),

    #[error("tree has no scored leaves")]
    UnscoredTree,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("{unreachable} of {drawn} sampled goals are outside the arm workspace (reach annulus {inner:.3}..{outer:.3} m); check the goal bounds")]
    UnreachableBounds {
        unreachable: usize,
        drawn: usize,
        inner: f64,
        outer: f64,
    },

    #[error("grid of {cells} cells exceeds the cap of {cap}")]
    GridTooLarge { cells: usize, cap: usize },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("weight file {path}: {source}")]
    WeightFile {
        path: PathBuf,
        #[source]
        source: WeightFileError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("forward model failed: {0}")]
    Forward(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
