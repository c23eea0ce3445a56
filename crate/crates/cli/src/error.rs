use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] dhsic::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                dhsic::Error::GuardExceeded { .. } => 3,
                dhsic::Error::AllPointsIdentical { .. } => 4,
                dhsic::Error::SearchExhausted { .. } => 5,
                _ => 2,
            },
        }
    }
}
