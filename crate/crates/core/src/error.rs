use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: {value:?} is not a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no data rows")]
    EmptyData,

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("invalid model spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("particle cloud degenerate at stage {stage}: {reason}")]
    DegenerateCloud { stage: usize, reason: String },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("quadrature: {0}")]
    Quadrature(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
