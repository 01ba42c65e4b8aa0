use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no route from node {from} to node {to}")]
    NoRoute { from: usize, to: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("pool of {n} rides exceeds the exhaustive evaluation cap of {cap}; lower the load or raise the cap")]
    OverCap { n: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }
}
