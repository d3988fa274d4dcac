use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("dimension mismatch at layer {layer}: expected width {expected}, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error(
        "patterns {first:?} and {second:?} agree on the chosen coordinates but lie in different cells"
    )]
    NotCoordinateSeparable { first: Vec<u8>, second: Vec<u8> },

    #[error("halfspaces of cell {cell} do not carve out that cell: pattern {pattern:?} is misplaced")]
    HalfspaceMismatch { cell: usize, pattern: Vec<u8> },

    #[error("halfspace margin {0} is not positive")]
    NonPositiveMargin(f64),

    #[error("pattern dimension {d} exceeds the enumeration limit of 20")]
    EnumerationGuard { d: usize },

    #[error("certificate verification failed: {0}")]
    CertificateFailed(String),

    #[error("column {column} has no observed entries")]
    FullyMissingColumn { column: usize },

    #[error("imputer has not been fitted")]
    Unfitted,

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("no closed-form Bayes regression function for {0}")]
    NoClosedForm(String),

    #[error("rejection sampler accepted {accepted} of {needed} draws within {proposals} proposals")]
    RejectionExhausted {
        proposals: u64,
        accepted: usize,
        needed: usize,
    },

    #[error("responses have zero sample variance")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, Error>;
