use thiserror::Error;

/// Crate-wide error type. Numeric variants map to a distinct process exit
/// code in the CLI; everything else is treated as a usage/config problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Non-finite value produced inside an iterative solve.
    #[error("numeric divergence at iteration {iteration}: {detail}")]
    NumericDivergence { iteration: usize, detail: String },

    /// Non-finite value detected outside an iterative solve (loss, gradient).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    InvalidState(String),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericDivergence { .. } | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
