use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] fedcovert::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("decoded payload differs from the sent payload ({bit_errors} of {payload_bits} bits wrong)")]
    DecodeFailed { bit_errors: usize, payload_bits: usize },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        HarnessError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status for this error.
    ///
    /// | code | meaning |
    /// |------|---------|
    /// | 1 | simulation failure |
    /// | 2 | invalid configuration or arguments |
    /// | 3 | payload exceeds channel capacity |
    /// | 4 | file could not be read or written |
    /// | 5 | payload framing error |
    /// | 6 | decoding did not reproduce the payload |
    pub fn exit_code(&self) -> i32 {
        use fedcovert::Error as E;
        match self {
            HarnessError::Sim(E::CapacityExceeded { .. }) => 3,
            HarnessError::Sim(E::Framing(_)) => 5,
            HarnessError::Sim(E::Config(_) | E::Dimension { .. }) => 2,
            HarnessError::Sim(_) => 1,
            HarnessError::Io { .. } => 4,
            HarnessError::Parse { .. } | HarnessError::Usage(_) => 2,
            HarnessError::DecodeFailed { .. } => 6,
        }
    }
}
