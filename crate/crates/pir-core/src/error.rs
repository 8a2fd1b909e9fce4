use thiserror::Error;

#[derive(Debug, Error)]
pub enum PirError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate sample id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("could not align model output with source text: {0}")]
    Alignment(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("classification failed: {0}")]
    Classification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("removing step {0} would leave an empty reasoning chain")]
    DegenerateRemoval(usize),

    #[error("unknown step index {0}")]
    UnknownStepIndex(usize),

    #[error("schema mismatch: expected {expected}, got {actual}")]
    SchemaMismatch { expected: String, actual: String },
}

pub type Result<T> = std::result::Result<T, PirError>;
