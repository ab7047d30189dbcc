use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("training made no progress: first-epoch loss {first}, final-epoch loss {last}")]
    NoProgress { first: f64, last: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Core(#[from] dflab_core::CoreError),

    #[error(transparent)]
    Data(#[from] dflab_data::DataError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
