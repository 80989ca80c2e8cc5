use thiserror::Error;

/// Domain errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("radius exceeds device")]
    RadiusExceedsDevice,
    #[error("points exceed working area")]
    PointsExceedWorkingArea,
    #[error("working area larger than device")]
    WorkingAreaExceedsDevice,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("not a single component")]
    NotSingleComponent,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate component")]
    DegenerateComponent,
    #[error("invalid class for this operation: {0}")]
    InvalidClass(String),
    #[error("environment too dense: placed {placed}, unplaced {unplaced}")]
    TooDense { placed: usize, unplaced: usize },
    #[error("missing dot at ({row}, {col})")]
    MissingDot { row: usize, col: usize },
    #[error("no depot")]
    NoDepot,
    #[error("no idle parking available")]
    NoIdleParking,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
