use thiserror::Error;

/// Errors produced by estimation, selection and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input too small or otherwise unusable (e.g. fewer than 2 rows for a
    /// pairwise-distance bandwidth).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// All pairwise distances are zero, so no positive bandwidth exists.
    #[error("singular bandwidth: median pairwise distance is zero")]
    SingularBandwidth,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value outside the mathematical domain of an operation (e.g. a
    /// propensity outside (0, 1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Linear algebra breakdown with condition diagnostics.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative routine stalled or was handed a non-descent direction.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Malformed input data (CSV parsing, missing columns, ...).
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
