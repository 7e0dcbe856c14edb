use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("schema violation in field `{field}`: {reason}")]
    Schema { field: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("forge precondition failed: {0}")]
    Forge(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(&'static str),

    #[error("token {token} outside vocabulary of size {vocab}")]
    Vocabulary { token: usize, vocab: usize },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn schema(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Schema {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}
