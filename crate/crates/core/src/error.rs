use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("invalid value for `{name}`: {reason}")]
    InvalidValue { name: String, reason: String },
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("non-finite state at t = {time}")]
    BlowUp { time: f64 },
    #[error("invalid integration setup: {0}")]
    Setup(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian")]
    Singular,
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Degenerate(String),
}

pub type Result<T, E = SolveError> = std::result::Result<T, E>;
