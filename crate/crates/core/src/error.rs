use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has norm {norm:e}, cannot normalize")]
    ZeroVector { row: usize, norm: f64 },

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index ({row}, {col}) out of range for {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("row {0} has no positives other than itself")]
    EmptyPositives(usize),

    #[error("row {0} has no negatives")]
    EmptyNegatives(usize),

    #[error("invalid pair index sets: {0}")]
    InvalidPairSets(String),

    #[error("batch of {0} is too small, need at least 2")]
    BatchTooSmall(usize),

    #[error("target {target} out of range for vocabulary of {vocab}")]
    TargetOutOfRange { target: usize, vocab: usize },

    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("position {0} out of range")]
    PositionOutOfRange(String),

    #[error("sequence {0} contains no tokens")]
    EmptySequence(usize),

    #[error("distance {value} at ({row}, {col}) must be finite and positive")]
    InvalidDistance { row: usize, col: usize, value: f64 },

    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("need at least {needed} evaluation pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("oracle scores are degenerate: {0}")]
    DegenerateOracle(String),

    #[error("bad CSV header: {0}")]
    BadHeader(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
