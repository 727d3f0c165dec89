use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Core(#[from] ipla_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// 0 success, 1 check failure, 2 configuration error, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        use ipla_core::Error as E;
        match self {
            LabError::Config { .. } => 2,
            LabError::Core(E::DivergedState { .. }) => 3,
            LabError::Core(
                E::InvalidArgument { .. } | E::GammaOutOfRange { .. } | E::UnsupportedModel(_) | E::Dataset(_),
            ) => 2,
            LabError::CheckFailed(_) | LabError::Core(_) | LabError::Io(_) | LabError::Csv(_) => 1,
        }
    }
}
