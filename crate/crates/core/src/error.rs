use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("instance has {nodes} nodes; exhaustive check is limited to {limit}")]
    InstanceTooLarge { nodes: usize, limit: usize },

    #[error("rank condition violated at BS {bs}: stacked rank {rank} < {required}")]
    RankDeficient { bs: usize, rank: usize, required: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Map a `toml` deserialization failure to a line-annotated parse error.
    pub(crate) fn from_toml(src: &str, err: toml::de::Error) -> Self {
        let line = err
            .span()
            .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            line,
            message: err.message().to_string(),
        }
    }
}
