use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vehicles {follower} and {leader} are in a collision state (gap {gap:.3} m)")]
    Collision { follower: usize, leader: usize, gap: f64 },

    #[error("non-positive gap {0} passed to car-following model")]
    NonPositiveGap(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("parameter file: {0}")]
    Format(String),

    #[error("config parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invariant violated for `{key}`: {rule}")]
    Invariant { key: String, rule: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(key: &str, rule: &str) -> Self {
        Error::Invariant {
            key: key.to_string(),
            rule: rule.to_string(),
        }
    }
}
