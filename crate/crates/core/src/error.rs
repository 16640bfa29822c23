use std::path::PathBuf;

/// Errors produced by the pipeline modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("not found: {kind} {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("validation failed on `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("integrity error in {record}: {message}")]
    Integrity { record: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("stale geometry: element path `{path}` does not resolve in the document")]
    StaleGeometry { path: String },

    #[error("missing placeholder images for prompts: {0:?}")]
    MissingPlaceholders(Vec<String>),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("generation stopped early after {} items: {reason}", collected.len())]
    PartialResult {
        collected: Vec<String>,
        reason: String,
    },

    #[error("malformed edit response: {0}")]
    MalformedEdit(String),

    #[error("render failed: {message}")]
    Render { message: String, log_excerpt: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("task pool exhausted for annotator {annotator}")]
    Exhausted { annotator: String },

    #[error("transform of record {record} failed: {message}")]
    Transform { record: String, message: String },

    #[error("every candidate in batch {batch} failed to score")]
    EmptyBatch { batch: String },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }

    pub fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
