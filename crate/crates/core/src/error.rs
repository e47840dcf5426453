use thiserror::Error;

/// Errors raised by the discretization, potential, functional and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WideError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid time axis: {0}")]
    InvalidTimeAxis(String),

    #[error("field length {found} does not match grid node count {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("trajectory has {found} levels, expected {expected}")]
    LevelCountMismatch { expected: usize, found: usize },

    #[error(
        "time index {index} outside stencil range [{lo}, {hi}] for derivative of order {order}"
    )]
    StencilRange {
        order: usize,
        index: usize,
        lo: usize,
        hi: usize,
    },

    #[error("invalid exponent {0} for an L^p norm (need 2 <= p < 4)")]
    InvalidNormExponent(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("potential evaluation outside its domain: {0}")]
    PotentialDomain(String),

    #[error("scalar proximal map failed to converge for v = {v} (residual {residual:e})")]
    ProxNonConvergence { v: f64, residual: f64 },

    #[error(
        "conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})"
    )]
    CgNonConvergence { iterations: usize, residual: f64 },

    #[error(
        "Newton iteration did not converge after {iterations} steps (gradient norm {grad_norm:e})"
    )]
    NewtonNonConvergence { iterations: usize, grad_norm: f64 },

    #[error(
        "line search failed at Newton step {iteration}: no descent along the Newton direction"
    )]
    LineSearchFailure { iteration: usize },

    #[error("trajectory violates the admissible class: {0}")]
    ConstraintViolation(String),

    #[error("mollifier support: {0}")]
    Mollifier(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("malformed trajectory dump: {0}")]
    Format(String),
}

impl From<std::io::Error> for WideError {
    fn from(e: std::io::Error) -> Self {
        WideError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WideError>;
