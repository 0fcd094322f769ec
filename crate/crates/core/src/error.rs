use thiserror::Error;

pub type Result<T> = std::result::Result<T, GhcmError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GhcmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("incompatible representation: {0}")]
    Representation(String),

    #[error("kernel matrix has an all-zero spectrum")]
    ZeroKernel,

    #[error("kernel matrix is not positive semi-definite (eigenvalue {eigenvalue:e}, largest {largest:e})")]
    NegativeEigenvalue { eigenvalue: f64, largest: f64 },

    #[error("sample size too small: {0}")]
    SampleSize(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error(
        "numerical integration did not converge (estimate {estimate}, error bound {error_bound:e})"
    )]
    Convergence { estimate: f64, error_bound: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid group specification: {0}")]
    GroupSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
