use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset source: {0}")]
    EmptyDataset(String),

    #[error("cannot ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate manifest path: {0}")]
    DuplicatePath(PathBuf),

    #[error("manifest parse error: {0}")]
    ManifestFormat(String),

    #[error(transparent)]
    Core(#[from] dflab_core::CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
