use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),

    #[error("sequence length {len} exceeds the maximum of {max} tokens")]
    SequenceTooLong { len: usize, max: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dense mask of {len}x{len} exceeds the dense limit of {limit} tokens")]
    DenseTooLarge { len: usize, limit: usize },

    #[error("bad dimension: {0}")]
    BadDimension(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("query row {0} has no visible keys")]
    AllMaskedRow(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("bad selection policy: {0}")]
    BadPolicy(String),

    #[error("scene id mismatch: ground truth {expected:?}, detections {found:?}")]
    SceneIdMismatch { expected: String, found: String },

    #[error("bad benchmark constraints: {0}")]
    BadConstraints(String),
}
