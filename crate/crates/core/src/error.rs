use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vertex block {vertex} is not positive definite (assembly inconsistency)")]
    NotSpd { vertex: usize },

    #[error("rotation Schur block at vertex {vertex} is singular")]
    SingularRotationBlock { vertex: usize },

    #[error("operator is not positive definite: <p, Mp> = {curvature:e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("system too large for the saddle-point oracle: {dofs} unknowns (limit {limit})")]
    SizeGuard { dofs: usize, limit: usize },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
