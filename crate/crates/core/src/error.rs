use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlamError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{what} index {index} out of range (size {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("K = {0} exceeds the supported maximum of {1} attributes")]
    TooManyAttributes(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("probability {value} for item {item} outside the open interval (0, 1)")]
    ProbabilityOutOfRange { item: usize, value: f64 },
    #[error("pattern {0} is not a column of the Gamma matrix")]
    UnknownPattern(String),
    #[error("pattern {0} is not an equivalence-class representative")]
    NotRepresentative(String),
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("grid position {position}: {source}")]
    PathFit {
        position: usize,
        #[source]
        source: Box<SlamError>,
    },
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, SlamError>;
