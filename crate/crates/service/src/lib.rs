//! HTTP service and batch jobs over the uifeedback pipeline.

pub mod config;
pub mod error;
pub mod jobs;
pub mod server;

pub use config::Config;
pub use error::ServiceError;
pub use jobs::{run_job, JobKind, JobReport, JobSpec};

use std::sync::Arc;

use uifeedback::corpus::Store;
use uifeedback::gateway::Backends;

/// Opens the store and builds the backends a config describes.
pub fn open(config: &Config) -> Result<(Arc<Store>, Arc<Backends>), ServiceError> {
    let store = Store::open(&config.store_dir).map_err(|e| ServiceError::Startup(format!("store: {e}")))?;
    store.set_durable(config.durable);
    let backends = Backends::from_profile(config.backends.clone())?;
    Ok((Arc::new(store), Arc::new(backends)))
}
