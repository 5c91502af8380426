use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A correlation matrix that is not usable (not PD, wrong shape, failed factorization).
    #[error("matrix error: {0}")]
    Matrix(String),
    /// A likelihood fit that could not be set up or run.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// An inconsistent model, DGP or counterfactual specification.
    #[error("invalid specification: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
