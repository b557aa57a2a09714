use std::path::PathBuf;

/// Errors raised anywhere in the bilevel pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("oracle failure: {0}")]
    Oracle(String),

    /// The follower has no feasible response to the given leader decision.
    #[error("follower problem is infeasible for this leader decision")]
    FollowerInfeasible,

    #[error("enumeration of {count} leader decisions exceeds the cap of {cap}")]
    Size { count: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("{kind} instance expected, found {found}")]
    Kind {
        kind: &'static str,
        found: &'static str,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
