use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors surfaced by data ingestion, model specification, fitting and the
/// extension models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("malformed record{}: {reason}", fmt_row(.row))]
    MalformedRecord { row: Option<usize>, reason: String },
    #[error("time {0} must be strictly positive and finite")]
    InvalidTime(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("formula syntax error at byte {offset}: {message}")]
    FormulaSyntax { offset: usize, message: String },
    #[error("variable `{var}`: {message}")]
    Role { var: String, message: String },
    #[error("length mismatch (expected {expected}, got {actual})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported censoring: {0}")]
    UnsupportedCensoring(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("coefficients of block `{0}` must be nondecreasing")]
    Monotonicity(String),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("covariance matrix unavailable: {0}")]
    VcovUnavailable(String),
    #[error("models are not nested: {0}")]
    NotNested(String),
    #[error("optimizer failure: {0}")]
    Optimizer(String),
    #[error("model has no time-varying term")]
    NoTimeVarying,
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn fmt_row(row: &Option<usize>) -> String {
    match row {
        Some(r) => alloc::format!(" on row {r}"),
        None => String::new(),
    }
}
