use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// validation problems exit 1, failed verification checks exit 2,
/// I/O problems exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("argument error: {0}")]
    Arg(String),
    #[error("allocation error: {0}")]
    Alloc(String),
    #[error("state error: {0}")]
    State(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("check failure: {0}")]
    Check(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Check(_) => 2,
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Arg(msg.into()))
}
