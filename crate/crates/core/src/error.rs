use thiserror::Error;

/// Errors raised by the profile calculus, the matrix model and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not self-adjoint (asymmetry {asymmetry:.3e} exceeds {threshold:.3e})")]
    NotSelfAdjoint { asymmetry: f64, threshold: f64 },

    /// The target is not submajorized by the operator: some partial integral
    /// of the singular value functions runs negative.
    #[error("infeasible: submajorization fails at cell {cell} with margin {margin:.6e}")]
    Infeasible { cell: usize, margin: f64 },

    /// A stage was entered with data that violates its hypothesis.
    #[error("precondition violated in {stage}: {detail}")]
    Precondition { stage: &'static str, detail: String },

    /// Something that the construction guarantees did not hold numerically.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn precondition(stage: &'static str, detail: impl Into<String>) -> Error {
    Error::Precondition {
        stage,
        detail: detail.into(),
    }
}
