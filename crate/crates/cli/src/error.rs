use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Parse { .. } => 4,
            CliError::Numerical(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<tpabc::Error> for CliError {
    fn from(e: tpabc::Error) -> Self {
        use tpabc::Error as E;
        match e {
            E::Io { path, source } => CliError::Io { path, source },
            E::Parse { path, line, msg } => CliError::Parse {
                what: format!("{}:{line}", path.display()),
                msg,
            },
            E::WeightFile { path, source } => CliError::Parse {
                what: path.display().to_string(),
                msg: source.to_string(),
            },
            E::Divergence { .. } | E::SimulationDiverged { .. } | E::NonFinite(_) | E::Forward(_) => {
                CliError::Numerical(e.to_string())
            }
            E::InvalidArgument(_)
            | E::DimensionMismatch { .. }
            | E::GridTooLarge { .. }
            | E::UnreachableBounds { .. }
            | E::Empty(_) => CliError::Usage(e.to_string()),
            E::NotALeaf(_) | E::UnscoredTree => CliError::Other(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Parse {
            what: "csv".into(),
            msg: e.to_string(),
        }
    }
}
