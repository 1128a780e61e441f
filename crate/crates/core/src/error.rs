use autodiff::NetError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("horizon mismatch: expected T={expected}, found T={found}")]
    HorizonMismatch { expected: usize, found: usize },
    #[error("band index {j} out of range for L={l}")]
    BandRange { j: usize, l: usize },
    #[error("insufficient demonstrations: need {required}, have {available}")]
    InsufficientDemos { required: usize, available: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("non-finite loss at frame {frame}")]
    NonFiniteLoss { frame: String },
    #[error("simulation diverged at tick {tick}")]
    Diverged { tick: usize },
    #[error("no scenarios found in {0}")]
    NoScenarios(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the error stems from bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Parse(_)
                | Error::Config(_)
                | Error::HorizonMismatch { .. }
                | Error::BandRange { .. }
                | Error::InsufficientDemos { .. }
                | Error::DegenerateInput(_)
                | Error::Format { .. }
                | Error::NoScenarios(_)
        )
    }

    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Diverged { .. } | Error::Net(NetError::NonFinite { .. })
        )
    }
}

impl From<autodiff::records::ReadError> for Error {
    fn from(e: autodiff::records::ReadError) -> Self {
        Error::Format {
            offset: e.offset,
            message: e.message,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
