use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmError {
    /// Tree file could not be tokenized or a field failed to parse.
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    /// Input is well formed but violates a structural or physical invariant.
    #[error("semantic error: {0}")]
    Semantic(String),

    /// A caller-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A pivot vanished during sparse or dense factorization.
    #[error("singular matrix: zero pivot at row {row} (|pivot| = {pivot:.3e})")]
    Singular { row: usize, pivot: f64 },

    /// Krylov seed or drive vector is identically zero.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The drive of a singular (blocking-boundary) system is not in its range.
    #[error("conservation violation: relative residual {relative_residual:.3e} of deflated solve")]
    ConservationViolation { relative_residual: f64 },

    /// The reduced operator cannot be inverted.
    #[error("reduced Hessenberg matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularHessenberg { condition: f64 },

    /// Non-finite values or other floating-point breakdowns.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The reference run never reached the critical stress.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Coordinate descent found no configuration that nucleates.
    #[error("search failure: {0}")]
    SearchFailure(String),
}

pub type Result<T> = std::result::Result<T, EmError>;
