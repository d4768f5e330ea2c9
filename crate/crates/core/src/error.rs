//! Error type shared by every module in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Binary file parse failure. `offset` is the byte position at which the
    /// problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    /// Non-finite value produced during an iterative numerical procedure;
    /// `step` names the iteration at which it appeared.
    #[error("numerical divergence at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    /// A measured quantity failed an asserted threshold (`evaluate --assert`).
    #[error("threshold failure: {0}")]
    Threshold(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code a CLI front-end should map this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::Threshold(_) => 5,
            _ => 1,
        }
    }
}
