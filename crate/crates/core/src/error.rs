use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-positive scale: {what} = {value}")]
    NonPositiveScale { what: &'static str, value: f64 },

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("decision map is not differentiable at x[{index}] = {value}")]
    NotDifferentiable { index: usize, value: f64 },

    #[error("decision x[{index}] = {value} is outside the map's domain")]
    OutOfDomain { index: usize, value: f64 },

    #[error("invalid parameter point: {0}")]
    InvalidParameter(String),

    #[error("parameter grid is empty after filtering invalid points")]
    EmptyGrid,

    #[error("every grid point assigns zero likelihood to the batch")]
    LikelihoodUnderflowEverywhere,

    #[error("true parameter index is not set on this grid")]
    TrueIndexUnset,

    #[error("no data absorbed yet")]
    NoDataYet,

    #[error("problem `{0}` has no closed-form objective")]
    NoAnalyticH(String),

    #[error("algorithm `{algorithm}` does not support {mode} problems")]
    ModeUnsupported {
        algorithm: &'static str,
        mode: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replay stream exhausted at stage {0}")]
    ReplayExhausted(usize),

    #[error("replay parse error at line {line}: {message}")]
    ReplayParse { line: usize, message: String },

    #[error("replication aborted at stage {stage}: {source}")]
    RunAborted {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{aborted} of {total} replications of `{algorithm}` aborted (limit 5%); first: {first}")]
    TooManyAborts {
        algorithm: &'static str,
        aborted: usize,
        total: usize,
        first: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Errors caused by the user's input rather than by a run going wrong.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Io { .. } | Error::ReplayParse { .. } | Error::DimensionMismatch { .. }
        )
    }
}
