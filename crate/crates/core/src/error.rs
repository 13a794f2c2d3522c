use std::io;

/// Errors raised across the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or unknown configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient observations: {0}")]
    InsufficientObservations(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A bitstream or file could not be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
