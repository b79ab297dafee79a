use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, axes, labels or other arguments that violate an operation's
    /// preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Empty or non-finite data handed to a decomposition.
    #[error("numerical input: {0}")]
    NumericalInput(String),

    /// An approximate contraction produced a value that cannot be right,
    /// e.g. a clearly negative norm or probability.
    #[error("contraction accuracy: {0}")]
    ContractionAccuracy(String),

    /// Every measurement outcome at a site carries (numerically) zero weight.
    #[error("degenerate state at site ({x}, {y}): outcome mass {mass:e}")]
    DegenerateState { x: usize, y: usize, mass: f64 },

    #[error("unsupported model `{0}`")]
    UnsupportedModel(String),

    #[error("system of {sites} sites exceeds the dense limit of {limit}")]
    SizeCap { sites: usize, limit: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown observable `{0}`")]
    UnknownObservable(String),

    /// A log line or table row that does not parse.
    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
