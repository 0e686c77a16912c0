use pcapae_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported capture format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported link type {0}: only Ethernet captures are handled")]
    UnsupportedLinkType(u32),
    #[error("truncated capture: {0}")]
    TruncatedCapture(String),
    #[error("malformed frame {index}: {reason}")]
    MalformedFrame { index: u64, reason: String },
    #[error("empty trace")]
    EmptyTrace,
    #[error("invalid label rule: {0}")]
    InvalidRule(String),
    #[error("invalid injection window: {0}")]
    InvalidWindow(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported store: {0}")]
    UnsupportedStore(String),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("label gap: no label for frame {0}")]
    LabelGap(u64),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("artifact directory is locked: {0}")]
    Locked(String),
    #[error(transparent)]
    Nn(NnError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Shape(m) => Error::Shape(m),
            NnError::NumericFault(m) => Error::NumericFault(m),
            NnError::InvalidParameter(m) => Error::InvalidParameter(m),
            NnError::Io(e) => Error::Io(e),
            other => Error::Nn(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
