use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("no seed inputs found in {0}")]
    NoSeeds(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed tag sidecar: {0}")]
    Sidecar(&'static str),
    #[error("malformed checksum table line {line}: {text}")]
    ChecksumTable { line: usize, text: String },
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
