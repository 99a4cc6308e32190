use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure at step {step}: {what}")]
    Numerical { step: u64, what: String },

    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    #[error("moving average has not been updated yet")]
    UninitializedEma,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the `kdfm` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Numerical { .. } => 4,
            Error::Shape(_)
            | Error::UnsupportedTarget(_)
            | Error::UninitializedEma
            | Error::InsufficientData(_)
            | Error::Data(_)
            | Error::Format { .. }
            | Error::Io(_) => 3,
        }
    }
}
