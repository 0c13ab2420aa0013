use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("invalid token `{token}`: {message}")]
    InvalidToken { token: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("search space too large: {size} architectures exceeds cap {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("step {step} out of range for a plan with {len} steps")]
    InvalidStep { step: usize, len: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// `line` is 0 for command-line overrides.
    #[error("config error at line {line}, key `{key}`: {message}")]
    ConfigKey {
        line: usize,
        key: String,
        message: String,
    },

    #[error("reward is undefined for a zero data shift (d_t = 0)")]
    DivisionByZeroShift,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("adaptation failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::Step {
            step,
            source: Box::new(source),
        }
    }
}
