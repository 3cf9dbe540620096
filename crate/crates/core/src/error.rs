use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("modality error: {0}")]
    Modality(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class count error: {0}")]
    Count(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown coarse label `{0}`")]
    Mapping(String),

    #[error("no connectivity: {0}")]
    Connectivity(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("fold error: {0}")]
    Fold(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
