use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("unsupported GGUF version {0} (only version 3 is supported)")]
    Version(u32),

    #[error("corrupt file: {section} at byte offset {offset}: {detail}")]
    Corrupt {
        section: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("context capacity exceeded: {needed} tokens needed, capacity is {capacity}")]
    Capacity { needed: usize, capacity: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("template error: {0}")]
    Template(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
