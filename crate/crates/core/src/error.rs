use thiserror::Error;

/// Errors raised across the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point at or behind the camera plane (depth {depth})")]
    NonPositiveDepth { depth: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample covariance has rank {rank}, fewer than the requested {requested} components")]
    RankDeficient { rank: usize, requested: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate minimal sample")]
    DegenerateSample,
    #[error("no pose model reached the minimum inlier count")]
    NoModelFound,
    #[error("every pose hypothesis failed")]
    AllHypothesesFailed,
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("query {0} missing from results")]
    MissingQuery(u32),
    #[error("malformed {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }
}
