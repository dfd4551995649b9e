//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

/// Unified error type for all library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in a kernel op; names the op and the offending shapes.
    #[error("dimension error in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Non-finite values or other numeric failure.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed file content; carries the byte offset of the failure.
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    /// Invariant violation in user-supplied data.
    #[error("validation error: {0}")]
    Validation(String),

    /// Bad configuration (hyperparameters, protocol, architecture).
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad runtime input (unknown node ids, empty support, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Episode sampling could not satisfy the request.
    #[error("episode error: {0}")]
    Episode(String),

    /// Training diverged or aborted; reports the failing iteration.
    #[error("training error at iteration {iteration}: {detail}")]
    Training { iteration: usize, detail: String },

    /// Tape misuse (backward before forward, unknown value id).
    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for input/validation problems,
    /// 2 for numeric/training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Training { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
