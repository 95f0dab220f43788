use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmldError {
    /// A parameter left the interior of its constrained domain (e.g. a
    /// positive-definite block lost positive definiteness).
    #[error("domain error: {0}")]
    Domain(String),

    /// Incompatible matrix or vector dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// A matrix required to be invertible (or an eigenvalue sum in the
    /// Lyapunov solve) fell below the numerical floor.
    #[error("singularity error: {0}")]
    Singularity(String),

    /// A configuration that is syntactically valid but statistically
    /// meaningless (e.g. posterior variance undefined at the given df).
    #[error("degenerate error: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, SmldError>;
