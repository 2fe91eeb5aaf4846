use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum FsmdpError {
    /// Invalid input: bad scope, mismatched table sizes, inconsistent config.
    #[error("configuration error: {0}")]
    Config(String),

    /// A brute-force path was asked to enumerate a joint space that is too
    /// large (or overflows).
    #[error("brute-force scale exceeded: {0}")]
    ScaleExceeded(String),

    /// The LP solver failed (pivot budget exhausted, numerically singular
    /// basis, or an internal consistency check tripped).
    #[error("solver error: {0}")]
    Solver(String),

    /// An internal invariant was violated; includes a dump of the offending
    /// structure where practical.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FsmdpError>;
