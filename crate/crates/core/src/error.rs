use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time regression: {previous} followed by {next}")]
    TimeRegression { previous: f64, next: f64 },

    #[error("numerical blow-up at step {step}: {what}")]
    BlowUp { step: usize, what: String },

    #[error("step {step}: dt = {dt:e} exceeds the explicit stability bound {bound:e}")]
    Unstable { step: usize, dt: f64, bound: f64 },

    #[error("noise/trajectory mismatch: {0}")]
    NoiseMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from the numerics rather than the inputs.
    pub fn is_blow_up(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::Unstable { .. })
    }
}
