use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("header mismatch in {path}: missing column `{column}`")]
    Header { path: PathBuf, column: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing births for complete VR observation of series `{series}` at {year}")]
    MissingBirths { series: String, year: f64 },

    #[error("basis error: {0}")]
    Basis(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("time {t} outside basis span [{lo}, {hi}]")]
    OutsideSpan { t: f64, lo: f64, hi: f64 },

    #[error("overlapping conflict periods: [{a0}, {a1}] and [{b0}, {b1}]")]
    OverlappingPeriods { a0: f64, a1: f64, b0: f64, b1: f64 },

    #[error("observation in series `{0}` cannot be routed to a likelihood branch")]
    Unrouteable(String),

    #[error("non-finite posterior at initialization in block `{block}`")]
    NonFiniteInit { block: String },

    #[error("missing fixed hyperparameter `{0}`")]
    MissingHyperparameter(String),

    #[error("invalid sampler config: {0}")]
    SamplerConfig(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
