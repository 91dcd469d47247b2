use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("object {index} of width {width} does not fit in row width {max_row_width}")]
    Unpackable {
        index: usize,
        width: f64,
        max_row_width: f64,
    },
    #[error("layout is empty")]
    EmptyLayout,
    #[error("non-finite input value at position {0}")]
    NonFinite(usize),
    #[error("slot {slot} outside 0..{max}")]
    SlotOutOfRange { slot: usize, max: usize },
    #[error("object count {n} outside 1..={max}")]
    ObjectCount { n: usize, max: usize },
    #[error("decode step {step} outside 0..{n}")]
    StepOutOfRange { step: usize, n: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate keypoint quad: {0}")]
    Degenerate(String),
    #[error("keypoint quad is not rectangular (opposite-edge mismatch ratio {ratio:.3})")]
    NotRectangular { ratio: f64 },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid target layout: {0}")]
    InvalidTarget(String),
    #[error("action {action} references missing object {index}")]
    MissingObject { action: usize, index: usize },
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
