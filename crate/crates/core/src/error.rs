use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown exponential family `{0}` (expected gaussian, poisson or bernoulli)")]
    UnknownFamily(String),

    #[error("canonical parameter {lambda} outside the {family} overflow guard |λ| ≤ {limit}")]
    Overflow {
        family: &'static str,
        lambda: f64,
        limit: f64,
    },

    #[error("grid mismatch: {0} nodes vs {1} nodes")]
    GridMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix has a negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("zero eigen-gap between indices {0} and {1}")]
    ZeroGap(usize, usize),

    #[error("Newton iteration diverged: row {row} has |ξ'g| = {value} beyond the overflow guard")]
    Divergence { row: usize, value: f64 },

    #[error("estimated eigenvalue θ̃_{index} = {value:e} is not positive; increase n or decrease ζ")]
    RankShortfall { index: usize, value: f64 },

    #[error("ζ = {zeta} outside the admissible window ({low}, {high})")]
    ZetaOutOfWindow { zeta: f64, low: f64, high: f64 },

    #[error("eigenvalue sequence violates the spacing condition at k = {0}")]
    SpacingViolation(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
