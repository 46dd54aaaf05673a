use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown head id {0}")]
    UnknownHead(usize),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
