use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition of the operation does not hold for this input.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A configured resource limit would be exceeded.
    #[error("capacity exceeded: {what} (limit {limit})")]
    Capacity { what: String, limit: u64 },

    /// Rejection sampling gave up.
    #[error("no non-extinct tree after {attempts} attempts ({diagnostic})")]
    RejectionBudget { attempts: u64, diagnostic: String },

    #[error("invalid file: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
