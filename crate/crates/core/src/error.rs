use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A preference-list length exceeds the size of the opposite side.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Inputs disagree structurally (agent counts, non-edges, malformed logs or files).
    #[error("structural error: {0}")]
    Structural(String),

    /// Brute-force enumeration refused because the instance is too large.
    #[error("scale error: {0}")]
    Scale(String),

    /// The probability-game bound `p_G / p_B^streak` was requested with `p_B = 0`.
    #[error("division error: bound p_G / p_B^streak is undefined for p_B = 0")]
    ZeroBadProbability,

    /// An adversary policy proposed a per-round Bad probability outside `[p_B, 1 - p_G]`.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An internal invariant failed. This is always a defect.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
