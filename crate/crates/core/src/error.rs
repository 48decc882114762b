use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the domain of the operation (argument name, message).
    #[error("domain error in `{0}`: {1}")]
    Domain(&'static str, String),

    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),

    /// Mean offspring is not above one, so the tree dies out almost surely.
    #[error("offspring mean {mean} is not supercritical (need mean > 1)")]
    NotSupercritical { mean: f64 },

    #[error("resource limit exceeded: {what} reached {limit} nodes")]
    ResourceLimit { what: &'static str, limit: usize },

    #[error("no sign change of the criticality index found for u in [{lo:e}, {hi:e}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("invalid vertex set: {0}")]
    InvalidSet(String),

    #[error("malformed sample file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
