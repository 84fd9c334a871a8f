use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ply parse error at line {line}: {message}")]
    PlyParse { line: usize, message: String },

    #[error("ply data error: {0}")]
    PlyData(String),

    #[error("vertex {index} has a non-finite coordinate")]
    NonFinite { index: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("output error: {0}")]
    Output(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
