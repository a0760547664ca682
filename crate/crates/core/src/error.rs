use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("gamma function pole at z = {0}")]
    GammaPole(f64),

    #[error("fractional exponent a = {a} outside {range}")]
    ExponentOutOfRange { a: f64, range: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("principal-value quadrature did not reach tolerance {tol:e} (estimated error {estimate:e})")]
    QuadratureNotConverged { tol: f64, estimate: f64 },

    #[error("symmetric eigendecomposition failed to converge")]
    EigenNotConverged,

    #[error("not enough points for the fit: {0}")]
    FitRange(String),

    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("invalid boundary signal: {0}")]
    InvalidSignal(String),

    #[error("bisection on the multiplier did not converge in {0} iterations")]
    BisectionFailed(usize),

    #[error("potential violates the smallness condition: {0}")]
    ThetaCondition(String),

    #[error("non-finite boundary traces in Gram assembly")]
    NonFiniteTraces,

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("value not representable in double precision: {0}")]
    Unrepresentable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inverse problem: {0}")]
    Inverse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
