use uifeedback::Error;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("{kind} job failed: {source}")]
    Job {
        kind: String,
        #[source]
        source: Error,
    },

    #[error("invalid parameters for {kind}: {message}")]
    Parameters { kind: String, message: String },

    #[error("startup failed: {0}")]
    Startup(String),

    #[error(transparent)]
    Core(#[from] Error),
}
