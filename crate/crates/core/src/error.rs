use thiserror::Error;

use crate::record::EmissionRecord;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    /// The adaptive integrator gave up. `partial` holds every sample recorded
    /// before the failure.
    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: String,
        partial: Option<Box<EmissionRecord>>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
