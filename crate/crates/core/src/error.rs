use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("record {record}: label byte {label} is not below num_classes {num_classes}")]
    LabelOutOfRange {
        record: usize,
        label: u8,
        num_classes: usize,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {0} is not an eligible mixing layer")]
    IneligibleLayer(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backward called without a train-mode trace")]
    MissingTrace,
    #[error("training aborted at epoch {epoch}, batch {batch} (lr = {lr}): {message}")]
    Aborted {
        epoch: usize,
        batch: usize,
        lr: f64,
        message: String,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
