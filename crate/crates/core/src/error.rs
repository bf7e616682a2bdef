use thiserror::Error;

/// Errors produced by the solvers, integrators and parsers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("radius r{index} = {value:e} is below the validity threshold")]
    NonPositiveRadius { index: usize, value: f64 },

    #[error("implicit frequency solve did not converge (last residual {residual:e})")]
    FrequencySolve { residual: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("Jacobian is numerically singular (rcond {rcond:e}); point is likely a bifurcation")]
    SingularJacobian { rcond: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigenvalue problem failed: {0}")]
    Eigen(String),

    #[error("continuation failed: {0}")]
    Continuation(String),

    #[error("continuation step fell below the minimum at tau = {tau} after {} points", partial.points.len())]
    StepUnderflow { tau: f64, partial: Box<crate::continuation::Branch> },

    #[error("branch switching fell back onto the parent branch")]
    NoBranchFound,

    #[error("radius collapsed below threshold at t = {time}")]
    RadiusCollapse { time: f64 },

    #[error("perturbation saturated before a decay rate could be fitted (partial rate {partial_rate})")]
    Saturated { partial_rate: f64 },

    #[error("too few peaks in signal: found {found}, need at least 3")]
    TooFewPeaks { found: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
