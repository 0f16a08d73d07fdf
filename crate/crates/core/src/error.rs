use eventgc_autodiff::AdError;

use crate::seqdata::Violation;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sequence {index}: {violation}")]
    InvalidSequence { index: usize, violation: Violation },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    /// Training hit a non-finite loss; carries the best snapshot so far.
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String, last_good: Box<crate::npp::NppModel> },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
