use thiserror::Error;

use crate::cpd::CpFactors;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{operand}`: expected {expected}, found {found}")]
    Shape {
        operand: &'static str,
        expected: String,
        found: String,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("window too short: need at least {required} steps, got {actual}")]
    WindowTooShort { required: usize, actual: usize },

    #[error("tensor mode size {size} exceeds capacity {cap}")]
    Capacity { size: usize, cap: usize },

    #[error("tensor is empty (no accumulated contributions or zero norm)")]
    EmptyTensor,

    #[error("rank {rank} exceeds mode size {dim}")]
    Rank { rank: usize, dim: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("ALS failed to converge after {iters} iterations: {reason}")]
    Convergence {
        iters: usize,
        reason: String,
        last: Box<CpFactors>,
    },

    #[error("Markov horizon {horizon} is shorter than the required {required}")]
    Horizon { horizon: usize, required: usize },

    #[error("degenerate Markov sequence: no realizable dynamics")]
    Degenerate,

    #[error("model database is empty")]
    EmptyDatabase,

    #[error("non-finite value in {what} at step {step}")]
    Numerical { what: &'static str, step: usize },

    #[error("{what} is not positive definite at step {step} even after jitter")]
    Conditioning { what: &'static str, step: usize },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("cold start failed: the first window carries no information (all-zero data); provide informative, persistently exciting inputs")]
    ColdStart,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("column mapping error: {0}")]
    Mapping(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(operand: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            operand,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// I/O error annotated with the path it concerns.
    pub(crate) fn at_path(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
