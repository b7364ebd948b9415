use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: u64 },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("repetition {repetition} (seed {seed}): {source}")]
    Repetition {
        repetition: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sensitive group {0} is empty in the held-out set")]
    EmptyGroup(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },

    #[error("did not converge after {iterations} iterations (last step {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("stream exhausted after {consumed} samples (needed {needed})")]
    StreamExhausted { consumed: u64, needed: u64 },

    #[error("csv: missing column `{0}`")]
    MissingColumn(String),

    #[error("csv row {row}: ragged row with {got} fields (header has {expected})")]
    RaggedRow { row: usize, expected: usize, got: usize },

    #[error("csv row {row}, column `{column}`: non-numeric value `{value}`")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("csv row {row}, column `{column}`: cannot map value `{value}`")]
    Unmappable { row: usize, column: String, value: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
