use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite evaluation of {what}")]
    NonFiniteEvaluation { what: String },

    #[error("convexity probe produced only coincident pairs")]
    DegenerateProbe,

    #[error("state diverged at step {step} ({})", .particle.map_or_else(|| "theta".to_string(), |i| format!("particle {i}")))]
    DivergedState { step: u64, particle: Option<usize> },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("empirical law is empty")]
    EmptySample,

    #[error("sample size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("step size {gamma} outside the stability window (0, {limit})")]
    GammaOutOfRange { gamma: f64, limit: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
