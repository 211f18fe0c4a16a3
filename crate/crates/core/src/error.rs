use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty trajectory batch")]
    EmptyBatch,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("safety trace misaligned with batch: {trace} trace entries for {batch} transitions")]
    MisalignedTrace { trace: usize, batch: usize },

    #[error("alpha {0} is too close to 1 for the budget decomposition")]
    AlphaOutOfRange(f64),

    #[error("dual solver produced a non-positive multiplier mu1 = {0} on the feasible branch")]
    NonPositiveMultiplier(f64),

    #[error("conjugate gradient diverged at iteration {iteration}")]
    CgDiverged { iteration: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("trajectory log parse error on line {line}: {reason}")]
    TrajectoryLog { line: usize, reason: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
