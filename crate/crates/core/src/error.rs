use std::path::PathBuf;

use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// A caller-supplied certificate fails its own norm preconditions.
    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),

    #[error("construction infeasible: {0}")]
    Infeasible(String),

    #[error("numeric failure at step {step}: {reason}")]
    Numeric { step: usize, reason: String },

    #[error("search budget of {cap} nodes exceeded")]
    BudgetExceeded { cap: u64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(step: usize, reason: impl Into<String>) -> Self {
        Error::Numeric {
            step,
            reason: reason.into(),
        }
    }
}
