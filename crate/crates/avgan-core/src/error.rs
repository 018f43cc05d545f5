//! One error type for the whole crate, with the CLI exit-code mapping.

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape/rank mismatch or otherwise invalid operand for a graph op.
    #[error("shape error: {0}")]
    Shape(String),
    /// A forward op produced NaN/Inf (error state by invariant).
    #[error("non-finite values produced by {0}")]
    NonFinite(String),
    #[error("audio error: {0}")]
    Audio(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 divergence,
    /// 4 gradient-check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape(_)
            | Error::Audio(_)
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::NonFinite(_) => 2,
            Error::Divergence(_) => 3,
            Error::GradCheck(_) => 4,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
