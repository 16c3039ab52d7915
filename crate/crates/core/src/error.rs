use std::io;

/// Errors raised across the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("background capture failed: sensor is in contact with the surface")]
    BackgroundCapture,

    #[error("action classification failed: {0}")]
    Classification(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numeric fault in {layer}: {message}")]
    NumericFault { layer: String, message: String },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("checkpoint corrupted: integrity hash mismatch")]
    Corrupt,

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset generation aborted after {completed} of {requested} units: {cause}")]
    GenerationAborted {
        completed: usize,
        requested: usize,
        cause: Box<Error>,
    },

    #[error("training aborted at step {step} (last checkpoint: {}): {cause}", last_checkpoint.map_or("none".to_string(), |c| c.to_string()))]
    TrainingAborted {
        step: u64,
        last_checkpoint: Option<u64>,
        cause: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn numeric(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::NumericFault {
            layer: layer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
