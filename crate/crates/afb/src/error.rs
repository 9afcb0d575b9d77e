use thiserror::Error;

/// Errors produced by solvers, protocol transitions and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An inner iterative solve ran out of iterations before reaching its
    /// tolerance. Carries the last fixed-point residual.
    #[error("convergence failure after {iterations} iterations (residual {residual:.3e})")]
    ConvergenceFailure { residual: f64, iterations: usize },

    /// Divergence guard: the iterate norm exceeded the blow-up threshold.
    #[error("iterate diverged at iteration {at_iter} (norm {norm:.3e})")]
    Divergence { norm: f64, at_iter: usize },

    /// A coordinator buffer transition was applied in an illegal state.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// An agent was never scheduled within the declared delay bound.
    #[error("bounded-delay violation: agent {agent} starved past {tau} epochs at epoch {epoch}")]
    DelayViolation { agent: usize, tau: usize, epoch: usize },

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
