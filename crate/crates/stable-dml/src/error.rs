use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An exact computation would exceed its combinatorial or memory budget.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    /// Input data did not match the documented schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Bad configuration (CLI flags or config file).
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
