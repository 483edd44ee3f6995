use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("constraint row {row} has zero norm")]
    ZeroNormRow { row: usize },
    #[error("objective vector has zero norm")]
    ZeroObjective,
    #[error("instance has {count} binaries, enumeration cap is {max}")]
    TooManyBinaries { count: usize, max: usize },
    #[error("simplex exceeded {limit} pivots (cycling suspected)")]
    IterationLimit { limit: usize },
    #[error("quadrature order {0} must be even and at least 4")]
    OddOrder(usize),
    #[error("node has {count} nonzeros but the padded maximum is {max}")]
    MaximaExceeded { count: usize, max: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("reference labels are missing for {0} instances")]
    MissingLabels(usize),
    #[error("generated instances exceed the enumeration cap: {0}")]
    SizeExceedsOracle(String),
    #[error("generator could not produce a feasible instance: {0}")]
    GenerationFailed(String),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit status for the command-line tool: 2 for configuration
    /// problems, 3 for numerical failures, 4 for I/O and malformed files,
    /// 1 for internal errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::SizeExceedsOracle(_)
            | Error::TooManyBinaries { .. }
            | Error::OddOrder(_)
            | Error::MaximaExceeded { .. }
            | Error::EmptyDataset
            | Error::MissingLabels(_)
            | Error::GenerationFailed(_) => 2,
            Error::NonFiniteValue { .. }
            | Error::IterationLimit { .. }
            | Error::ZeroNormRow { .. }
            | Error::ZeroObjective => 3,
            Error::Io(_) | Error::Format(_) => 4,
            Error::DimensionMismatch { .. } | Error::ShapeMismatch { .. } | Error::NotScalar(_) => {
                1
            }
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}
