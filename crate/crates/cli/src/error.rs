use std::fmt;

use pacemaker_core::error::{ModelError, SolveError};

/// A failure that ends the run with a specific exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const CONFIG: u8 = 2;
pub const BLOWUP: u8 = 3;
pub const UNDECIDED: u8 = 4;
pub const NO_SEED: u8 = 5;
/// Numerical failure or I/O error not covered by a dedicated code.
pub const RUNTIME: u8 = 1;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        // keep the stderr line single-line and parseable
        let message = message.into().replace('\n', " ");
        Self { code, message }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(RUNTIME, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ERROR {}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Model(m) => m.into(),
            SolveError::Integrate(i) => Self::new(BLOWUP, i.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
