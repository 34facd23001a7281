use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported loss: {0}")]
    UnsupportedLoss(String),

    #[error("degenerate priors: {0}")]
    DegeneratePrior(String),

    #[error("infeasible noise: {0}")]
    InfeasibleNoise(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("identity check failed: {0}")]
    CheckFailed(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 for configuration problems, 3 for data and IO problems, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnsupportedLoss(_)
            | Error::InfeasibleNoise(_)
            | Error::DegeneratePrior(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } | Error::State(_) => 3,
            Error::Domain(_)
            | Error::Shape(_)
            | Error::Estimation(_)
            | Error::Training(_)
            | Error::CheckFailed(_) => 4,
        }
    }
}
