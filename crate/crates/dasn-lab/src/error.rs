use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto process exit codes:
/// configuration problems exit 1, IO problems exit 2, numerical divergence
/// exits 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("arity error: {0}")]
    Arity(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("divergence at iteration {iteration}: loss term {term} is not finite")]
    Divergence { iteration: usize, term: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}
