use thiserror::Error;

/// Failure of a subcommand; each variant maps to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("iteration cap reached: {0}")]
    IterationCap(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::IterationCap(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<chbc_core::Error> for CliError {
    fn from(e: chbc_core::Error) -> Self {
        match e {
            chbc_core::Error::InvalidArgument(m) => CliError::Config(m),
            chbc_core::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
