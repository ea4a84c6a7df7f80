use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("waveform too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature variant mismatch: expected {expected}, found {found}")]
    Variant { expected: String, found: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported wav: {0}")]
    Wav(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("silent signal: {0} has zero RMS")]
    Silent(&'static str),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("quantized parameters are not trainable")]
    NotTrainable,
    #[error("model is already quantized")]
    AlreadyQuantized,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Range(_) => ErrorKind::Usage,
            Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Wav(other.to_string()),
        }
    }
}
