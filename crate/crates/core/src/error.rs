use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical procedure failed (factorization, instability).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A model or registry description is not admissible.
    #[error("configuration error: {0}")]
    Config(String),

    /// A block beyond the admissible horizon was requested.
    #[error("horizon error: block {block} requested but only {blocks} blocks cover the horizon")]
    Horizon { block: usize, blocks: usize },

    /// Internal bookkeeping was violated (missing derivative data, grid drift).
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
