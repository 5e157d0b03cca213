use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("degenerate factor: sampled weights have zero RMS")]
    DegenerateFactor,

    #[error("payload of {requested} bits exceeds channel capacity of {capacity} bits")]
    CapacityExceeded { requested: usize, capacity: usize },

    #[error("incomplete transmission: {required} rounds needed, {available} recorded")]
    IncompleteTransmission { required: usize, available: usize },

    #[error("framing error: {0}")]
    Framing(String),

    #[error("cosine similarity undefined: client {client} submitted a zero-norm update")]
    UndefinedSimilarity { client: usize },

    #[error("insufficient trace: {required} rounds needed, {available} recorded")]
    InsufficientTrace { required: usize, available: usize },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
