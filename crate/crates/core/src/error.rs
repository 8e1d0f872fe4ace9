use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("infeasible parameter {0}")]
    InfeasibleParameter(String),
    #[error("no observations")]
    NoObservations,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative variance {0}")]
    NegativeVariance(f64),
    #[error("candidate grid has {rows} rows, above the safety bound of {bound}; set a cap or reduce the steps")]
    GridTooLarge { rows: u128, bound: u128 },
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("parameter {name} out of range: {detail}")]
    OutOfRange { name: String, detail: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
