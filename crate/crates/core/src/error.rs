use thiserror::Error;

/// Errors raised by every module in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("batch too small: need at least {needed}, got {got}")]
    BatchTooSmall { needed: usize, got: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },
    #[error("triplet set is empty")]
    EmptyTripletSet,
    #[error("class {0} has no center")]
    UnknownClass(usize),
    #[error("at least two classes are required")]
    NeedTwoClasses,
    #[error("class {class} has {size} samples, fewer than {k} clusters")]
    ClassTooSmall { class: usize, size: usize, k: usize },
    #[error("cluster variance {0:e} is degenerate")]
    DegenerateVariance(f64),
    #[error("batch size {b} is not divisible by {k}")]
    IndivisibleBatch { b: usize, k: usize },
    #[error("need {needed} classes, dataset has {available}")]
    NotEnoughClasses { needed: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trace does not belong to this network")]
    TraceMismatch,
    #[error("iteration {t} outside schedule of {total}")]
    OutOfRange { t: usize, total: usize },
    #[error("k = {k} too large for {n} items")]
    KTooLarge { k: usize, n: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("cannot place {modes} mode centers {separation} apart")]
    PlacementFailure { modes: usize, separation: f64 },
    #[error("event has {frames} frames, need at least {needed}")]
    EventTooShort { frames: usize, needed: usize },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
