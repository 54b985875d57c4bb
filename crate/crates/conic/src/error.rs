use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("{location} references variable {index} but the program declares {n_vars}")]
    UnknownVariable {
        index: usize,
        n_vars: usize,
        location: String,
    },
    #[error("program not supported by the {backend} backend: {reason}")]
    Unsupported {
        backend: &'static str,
        reason: String,
    },
    #[error("backend setup failed: {0}")]
    Backend(String),
}
