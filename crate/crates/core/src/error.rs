use thiserror::Error;

pub type Result<T, E = HfaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HfaError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty game set")]
    EmptyGameSet,

    #[error("HFA not estimable")]
    NotEstimable,

    #[error("saturated model: no residual degrees of freedom")]
    Saturated,

    #[error("contrast not estimable: {0}")]
    ContrastNotEstimable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{failed} of {total} replicates failed, above the allowed budget")]
    TooManyFailures { failed: usize, total: usize },
}
