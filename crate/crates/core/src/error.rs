use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("theory is not stratified: attribute `{attribute}` is negated in a rule body and concluded by rule {rule_id}")]
    Stratification { attribute: String, rule_id: String },

    #[error("invalid theory: {0}")]
    InvalidTheory(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{bits} variables are too many for exact enumeration (limit {limit})")]
    TooLarge { bits: usize, limit: usize },

    #[error("theory has no statements")]
    EmptyTheory,

    #[error("example {0} has no gold proof")]
    MissingGold(String),

    #[error("gold proof references unknown node `{0}`")]
    UnknownNode(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("rejected {0} candidate theories without finding a usable query")]
    ResampleExhausted(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("prediction count {predictions} does not match gold count {gold}")]
    LengthMismatch { predictions: usize, gold: usize },

    #[error("prediction id `{prediction}` does not match gold id `{gold}` at position {position}")]
    IdMismatch {
        position: usize,
        prediction: String,
        gold: String,
    },

    #[error("oracle check failed: {0}")]
    OracleFailed(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
