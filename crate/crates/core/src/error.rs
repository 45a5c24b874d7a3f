use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid synthetic robot spec: {0}")]
    InvalidSpec(String),

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dataset is already normalized")]
    AlreadyNormalized,

    #[error("dataset is not normalized")]
    NotNormalized,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("infeasible grouping constraints: {0}")]
    Infeasible(String),

    #[error("graph has {components} components after all merges, cannot reach {target}")]
    Disconnected { components: usize, target: usize },

    #[error("{}: {cause}", path.display())]
    File { path: PathBuf, cause: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            cause: source,
        }
    }
}
