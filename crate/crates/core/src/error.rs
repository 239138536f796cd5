use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation and certification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no correspondences were provided")]
    EmptyInput,

    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("scene generation gave up after {attempts} attempts")]
    GenerationTimeout { attempts: usize },

    #[error("objective or gradient is not finite")]
    NonFiniteCost,

    #[error("constraint jacobian is rank deficient (smallest singular value {sigma_min:.3e})")]
    RankDeficientJacobian { sigma_min: f64 },

    #[error(
        "point is not feasible: max constraint residual {residual:.3e} exceeds {tolerance:.3e}"
    )]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("every sampled hypothesis was degenerate")]
    NoModelFound,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
