use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix inclusion `E Eᵀ ⪯ F G Fᵀ` does not hold; carries the offending residual.
    #[error("inclusion violated ({what}, residual {residual:.3e})")]
    InclusionViolated { what: &'static str, residual: f64 },

    #[error("numerical rank failure: {0}")]
    NumericalRank(String),

    #[error("experiment diverged at step {step} (|x| = {norm:.3e})")]
    UnstableExperiment { step: usize, norm: f64 },

    /// The data Gram matrix does not dominate the noise block Θ₂₂.
    #[error("signal-to-noise assumption violated: lambda_min = {lambda_min:.3e}")]
    AssumptionViolated { lambda_min: f64 },

    /// The data are inconsistent with the postulated bound (𝒬 clearly indefinite).
    #[error("consistency set is empty: lambda_min(Q) = {lambda_min:.3e}")]
    EmptySet { lambda_min: f64 },

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
