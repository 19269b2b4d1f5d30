use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("counter overflow computing C({n}, {k})")]
    Overflow { n: usize, k: usize },

    #[error("non-finite value {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("quadrature node count {count} exceeds cap {cap}")]
    NodeCap { count: u128, cap: usize },

    #[error("ill-conditioned monomial Gram matrix (condition estimate {estimate:.3e}); use more samples or a lower degree")]
    IllConditioned { estimate: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("eigen-solver did not converge: {0}")]
    EigenFailure(String),

    #[error("insufficient quadrature exactness: need degree {needed}, rule integrates {available}")]
    InsufficientExactness { needed: usize, available: usize },

    #[error("infeasible recovery problem: minimal residual {residual:.3e} exceeds {bound:.3e}")]
    Infeasible { residual: f64, bound: f64 },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("non-finite diffusion coefficient exp({exponent}) at x = {x}")]
    Coefficient { x: f64, exponent: f64 },

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by user input (files, configs) rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}
