use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("diffeomorphism failure: sup|beta_x| = {0:.3e} >= 1/2")]
    Diffeomorphism(f64),
    #[error("conformal map did not converge; residual history {0:?}")]
    Convergence(Vec<f64>),
    #[error("small divisor: {0}")]
    SmallDivisor(String),
    #[error("Neumann series inversion failed: ||Psi|| = {0:.3e}")]
    Neumann(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
