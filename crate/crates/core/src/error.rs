use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("loss must be a real scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("non-finite value produced by `{0}`")]
    NonFinite(String),

    #[error("spectrum is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("invalid resolution: {0}")]
    Resolution(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn resolution(msg: impl Into<String>) -> Self {
        Error::Resolution(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset: offset as u64,
            msg: msg.into(),
        }
    }
}
