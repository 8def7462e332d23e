use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("infeasible state: {0}")]
    InfeasibleState(String),
    #[error("infeasible state at t = {time} s: {reason}")]
    InfeasibleAt { time: f64, reason: String },
    #[error("control input outside [0, 1]: u1 = {u1}, u2 = {u2}")]
    InvalidControl { u1: f64, u2: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("rejection sampling stalled: acceptance {accepted}/{drawn}")]
    RejectionStall { accepted: usize, drawn: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },
    #[error("infeasible measurement: {0}")]
    InfeasibleMeasurement(String),
    #[error("quadratic program failed: {0}")]
    QpFail(String),
    #[error("controller failed at step {step}: {source}")]
    Controller { step: usize, source: Box<Error> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
