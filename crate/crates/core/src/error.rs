use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    GeometryInvalid(String),

    #[error("meshing failed: {0}")]
    MeshingFailed(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("periodic identification requested but {0}")]
    MissingPairs(String),

    #[error("system already carries a mean-value constraint")]
    DoubleConstraint,

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("relative residual {residual:.3e} exceeds {tolerance:.1e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("energy bound violated for corrector {index}: |grad w| = {gradient:.6e} > bound {bound:.6e}")]
    EnergyBoundViolated {
        index: usize,
        gradient: f64,
        bound: f64,
    },

    #[error("tensor at p = {p} has non positive-definite symmetric part (min eigenvalue {min_eigenvalue:.3e})")]
    PositivityViolated { p: f64, min_eigenvalue: f64 },

    #[error("dispersion tensor with non positive-definite symmetric part (min eigenvalue {0:.3e})")]
    NonPositiveTensor(f64),

    #[error("coercivity bound theta = {theta} exceeds the smallest eigenvalue {min_eigenvalue} of D at {at:?}")]
    CoercivityViolated {
        theta: f64,
        min_eigenvalue: f64,
        at: [f64; 2],
    },

    #[error("subdomain is not aligned with mesh lines: {0}")]
    SubdomainMisaligned(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last error {last_error:.3e})")]
    NotConverged { iterations: usize, last_error: f64 },

    #[error("invalid expression `{expr}`: {message}")]
    Expression { expr: String, message: String },

    #[error("invalid configuration field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            message: message.into(),
        }
    }
}
