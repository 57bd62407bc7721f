use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no pairable resonance: {0}")]
    NoResonance(String),
    #[error("unphysical result: {0}")]
    Unphysical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } | CliError::Io(_) => 2,
            CliError::NoResonance(_) => 3,
            CliError::Unphysical(_) => 4,
        }
    }
}
