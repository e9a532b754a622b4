use alloc::string::String;
use alloc::vec::Vec;

use crate::model::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dataset failed validation ({} violation(s))", .0.len())]
    Invalid(Vec<Violation>),
    #[error("singular system in {0}")]
    Singular(&'static str),
    #[error("parameter outside its domain: {0}")]
    Domain(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{failed} of {total} bootstrap replicates failed")]
    ReplicateFailures { failed: usize, total: usize },
    #[error("fit without area {area} failed: {reason}")]
    LeaveOneOut { area: String, reason: String },
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::ReplicateFailures { .. } | Error::LeaveOneOut { .. }
        )
    }
}
