use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("index out of range: ({i}, {j}) on a grid with {steps} steps")]
    IndexOutOfRange { i: usize, j: usize, steps: usize },

    #[error("degenerate grid: at least one step is required")]
    DegenerateGrid,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at grid point {0}")]
    NonFinite(usize),

    #[error(
        "covariance matrix is ill-conditioned (steps = {steps}, hurst = {hurst}) even after jitter"
    )]
    IllConditioned { steps: usize, hurst: f64 },

    #[error("solution blew up at step {step} (|x| = {magnitude:e})")]
    BlowUp { step: usize, magnitude: f64 },

    #[error("exponent {0} overflows exp()")]
    Overflow(f64),

    #[error("operation not defined for this input: {0}")]
    Unsupported(String),

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("inversion failed after {iterations} iterations (residual {residual:e})")]
    Inversion { iterations: usize, residual: f64 },

    #[error("matrix is singular at the evaluated point")]
    Singular,

    #[error("fixed-point iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("missing entry: {0}")]
    Missing(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
