use std::path::PathBuf;

use thiserror::Error;

use crate::problem::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("config error in {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("invalid grid input: {0}")]
    Grid(String),

    #[error("invalid control: {0}")]
    Control(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear solve failed at time step k={k}: {reason}")]
    StepSolve { k: usize, reason: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of the linear algebra in the forward solve.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::StepSolve { .. })
    }
}
