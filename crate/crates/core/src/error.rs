use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("operation acts on {expected} modes but {got} targets were given")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symplectic (max residual {residual:e})")]
    NotSymplectic { residual: f64 },
    #[error("covariance is not symmetric (max residual {residual:e})")]
    Asymmetric { residual: f64 },
    #[error("state violates the uncertainty principle (min eigenvalue {min_eigenvalue:e})")]
    Unphysical { min_eigenvalue: f64 },
    #[error("marginal variance of {mode}.{quad} is {variance:e}; cannot measure")]
    NonPositiveVariance {
        mode: String,
        quad: &'static str,
        variance: f64,
    },
    #[error("invalid quadrature combination: {0}")]
    Combination(String),
    #[error("measured quadratures {a} and {b} do not commute (symplectic product {product:e})")]
    NonCommuting { a: String, b: String, product: f64 },
    #[error("row `{0}` is not live in the ledger")]
    DeadRow(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
