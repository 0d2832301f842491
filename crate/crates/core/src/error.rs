use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("field length {found} does not match space size {expected}")]
    FieldLength { expected: usize, found: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("marginal not normalized: mass {mass} (expected 1 within {tol})")]
    NotNormalized { mass: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step-size rejection: step {step} exceeds stable bound {bound}")]
    StepSizeRejected { step: f64, bound: f64 },

    #[error(
        "fixed-point iteration did not converge within {iterations} iterations \
         (last contraction factor {factor})"
    )]
    NonConvergence { iterations: usize, factor: f64 },

    #[error("nonpositive frame entry {value} at time {time}, point {point}")]
    NonPositiveFrame { time: f64, point: usize, value: f64 },

    #[error("negative density {value} at time {time}, point {point} beyond clamp band")]
    NegativeDensity { time: f64, point: usize, value: f64 },

    #[error("kernel violates {what}: worst deviation {deviation}")]
    InvalidKernel { what: &'static str, deviation: f64 },

    #[error("zero-probability bridge endpoint: p(x={x} -> y={y}, h={h}) = {value}")]
    ZeroProbabilityEndpoint { x: usize, y: usize, h: f64, value: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
