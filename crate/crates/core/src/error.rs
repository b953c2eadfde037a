use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum SmpError {
    /// Matrix/vector dimensions do not conform.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or empty input (bad counts, empty batches, duplicate ids).
    #[error("input error: {0}")]
    Input(String),

    /// Non-finite values or failed factorizations.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Zero-norm features or weight columns fed to a cosine operation.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Session ordering or missing per-class state violations.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Configuration that fails schema validation.
    #[error("config error: {0}")]
    Config(String),

    /// Checksum or magic mismatch on a stored artifact.
    #[error("corrupt artifact: {0}")]
    Corrupt(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SmpError {
    /// Process exit code assigned to this error class.
    /// 2 config/validation, 3 io, 4 protocol, 5 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            SmpError::Config(_) | SmpError::Input(_) | SmpError::Shape(_) => 2,
            SmpError::Io(_) | SmpError::Corrupt(_) => 3,
            SmpError::Protocol(_) => 4,
            SmpError::Numeric(_) | SmpError::Degenerate(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, SmpError>;
