use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver error: {0}")]
    Solver(String),

    /// Newton failed to reduce the residual of one time step.
    #[error("step {step} failed after {iterations} Newton iterations (residual {residual:.3e}, initial {initial:.3e})")]
    StepFailure {
        step: usize,
        iterations: usize,
        residual: f64,
        initial: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
