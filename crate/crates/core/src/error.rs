//! Error type shared by all library modules.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Material parameters violate a validity requirement (non-positive
    /// stiffness, non-elliptic phase, ...).
    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    /// Geometric input is inadmissible (inclusion touching the cell
    /// boundary, fraction outside (0,1), ...).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Dimension or grid-shape mismatch between arguments.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A field or tensor contains NaN or infinite entries.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A function requested on the unit cell is not 1-periodic.
    #[error("periodicity violated: {0}")]
    Periodicity(String),

    /// Mutually inconsistent model inputs, e.g. a chiral coupling without
    /// any second-gradient stiffness to scale it against.
    #[error("inconsistent model: {0}")]
    Inconsistent(String),

    /// Iterative solver failed to reach the requested tolerance. The
    /// residual history is kept for diagnostics.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// An assembled quadratic form that must be positive definite is not;
    /// `margin` is the most negative generalized eigenvalue found.
    #[error("form not coercive: margin {margin:.3e}")]
    NotCoercive { margin: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed binary container or incompatible file version.
    #[error("file format error: {0}")]
    Format(String),
}
