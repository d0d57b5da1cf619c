use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("metric space violates {0}")]
    InvalidMetric(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operands are defined over different metric spaces")]
    SpaceMismatch,

    #[error("histogram mass invalid: {0}")]
    InvalidHistogram(String),

    #[error("unequal multiset sizes ({0} vs {1})")]
    UnequalSizes(usize, usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("lipschitz constant is unbounded: points {0} and {1} are at distance 0 with different values")]
    UnboundedLipschitz(usize, usize),

    #[error("supplied lipschitz bound {supplied} is below the true constant {actual}")]
    LipschitzTooSmall { supplied: f64, actual: f64 },

    #[error("channel is not certified at level {alpha0}: {detail}")]
    NotCertified { alpha0: f64, detail: String },

    #[error("amplification inapplicable: alpha0 = {alpha0} must be below {limit}")]
    AmplificationInapplicable { alpha0: f64, limit: f64 },

    #[error("no feasible per-item budget: {0}")]
    Infeasible(String),

    #[error("matrix is not a right inverse of the channel (max deviation {0:e})")]
    NotRightInverse(f64),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("enumeration too large: {0} outcomes exceeds the limit of {1}")]
    Intractable(f64, f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
