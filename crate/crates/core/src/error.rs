use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("channel {channel} is busy (release time {release}) but was assigned action {action}")]
    ConstraintViolation {
        channel: usize,
        release: u32,
        action: usize,
    },

    #[error("stationary tail mass {tail:e} beyond x_max = {x_max} exceeds 1e-9; raise x_max")]
    Truncation { x_max: usize, tail: f64 },

    #[error("optimal threshold hit the search cap {cap}; raise the cap")]
    ThresholdCap { cap: u32 },

    #[error("no index crossing for x = {x} within [{low}, {high}]; raise the upper search bound")]
    IndexOutOfSearchRange { x: u64, low: f64, high: f64 },

    #[error("sampled action {action} has non-positive probability {prob}")]
    DegenerateDistribution { action: usize, prob: f64 },

    #[error("corrupt experience buffer: stored behaviour probability {prob} at step {step}")]
    CorruptBuffer { step: usize, prob: f64 },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("state space has {size} states, above the cap of {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },

    #[error("relative value iteration did not converge in {iterations} iterations (span {span:e})")]
    NotConverged { iterations: usize, span: f64 },

    #[error("unsupported {what} version {found}")]
    UnsupportedVersion { what: &'static str, found: u32 },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
