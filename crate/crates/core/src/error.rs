use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension n = {0}; only n = 2 and n = 3 are implemented")]
    UnsupportedDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("uniform ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("modulus of continuity is not monotone: {0}")]
    NonMonotoneModulus(String),

    #[error("adaptive integrator step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("contraction failure: {0}")]
    Contraction(String),

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("annulus outside grid: {0}")]
    OutOfGrid(String),

    #[error("source is not orthogonal to span{{1, theta_1..theta_n}}: {0}")]
    NotOrthogonal(String),

    #[error("missing derivative table: {0}")]
    MissingDerivative(String),

    #[error("field is not radially-angularly separable: {0}; use fixed_point_solve instead")]
    NonSeparable(String),

    #[error("invalid cutoff: {0}")]
    Cutoff(String),

    #[error("modulus is not square-Dini: {0}")]
    NotSquareDini(String),

    #[error("radial flux coefficient alpha is not positive at r = {r:e} (alpha = {alpha:e})")]
    NonPositiveAlpha { r: f64, alpha: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
