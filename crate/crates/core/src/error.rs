use thiserror::Error;

/// Errors produced by the synthesis and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular to working precision")]
    SingularMatrix,
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("weighting matrices Q and R must be symmetric positive definite")]
    BadWeights,
    #[error("not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("state outside the model domain: {0}")]
    DomainViolation(String),
    #[error("origin is not an equilibrium: |f(0)|∞ = {0:.3e}")]
    NotAnEquilibrium(f64),
    #[error("non-finite Jacobian at the equilibrium")]
    NonFiniteJacobian,
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("recorded lambda {value} at step {step} is not positive")]
    NonPositiveLambda { step: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
