use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no alignment candidate overlaps the buffer")]
    EmptyOverlap,
    #[error("time {tau} is outside the buffer span [{start}, {end}]")]
    OutOfRange { tau: f64, start: f64, end: f64 },
    #[error("chunk step period {chunk} does not match buffer step period {buffer}")]
    StepPeriodMismatch { chunk: f64, buffer: f64 },
    #[error("invalid chunk: {0}")]
    InvalidChunk(String),

    #[error("pose history does not cover the requested window: {0}")]
    InsufficientHistory(String),
    #[error("rotation of {angle} rad is too close to the log-map branch cut")]
    RotationTooLarge { angle: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sequence index {index} is outside the available window of {len} frames")]
    IndexOutOfRange { index: i64, len: usize },

    #[error("platform moved less than the minimum required for a velocity ratio")]
    DegenerateMotion,
    #[error("every latency candidate was degenerate")]
    AllDegenerate,
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Schema(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
