//! Crate-wide error type.
//!
//! Errors are split into two kinds: `Invalid` for violated preconditions
//! (rejected inputs, bad configuration) and `Numerical` for failures that
//! occur during a solve (singular systems, non-convergence). The CLI maps
//! these to exit codes 1 and 2 respectively. Every message names the module
//! that raised it.

/// Error raised by any operation in this crate.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("{module}: {message}")]
    Invalid {
        module: &'static str,
        message: String,
    },
    /// A numerical failure occurred during a solve or factorization.
    #[error("{module}: {message} (numerical)")]
    Numerical {
        module: &'static str,
        message: String,
    },
}

impl Error {
    pub fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            module,
            message: message.into(),
        }
    }

    pub fn numerical(module: &'static str, message: impl Into<String>) -> Self {
        Error::Numerical {
            module,
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI: 1 for validation, 2 for numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid { .. } => 1,
            Error::Numerical { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
