use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("simulation diverged at step {step} (value {value})")]
    SimulationDiverged { step: usize, value: f64 },

    #[error("ODE integration diverged on codebook path {path} at step {step}")]
    OdeDiverged { path: usize, step: usize },

    #[error("quantizer solver failed for N={size}: residual {residual:e} after {iterations} iterations")]
    SolverFailure {
        size: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("degenerate quantization grid at time index {step}: duplicate values remain after tie-breaking")]
    DegenerateGrid { step: usize },

    #[error("filter degenerate at step {step}: all likelihood weights vanished")]
    FilterDegenerate { step: usize },

    #[error("quantization cache: {0}")]
    Cache(String),

    #[error("model `{model}` does not support {what}")]
    Unsupported { model: String, what: &'static str },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
