//! Library-wide error type.

use thiserror::Error;

/// Errors produced by model evaluation, set prediction, and the solvers.
#[derive(Debug, Error)]
pub enum ImError {
    /// A parameter coordinate lies outside its declared open interval.
    #[error("parameter coordinate {index} = {value} outside open bounds ({lower}, {upper})")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    /// The data point has no auxiliary preimage under the association at this parameter.
    #[error("inversion failed: {0}")]
    Inversion(String),

    /// A finite-difference stencil would step across a parameter boundary.
    #[error("parameter coordinate {index} within {step} of its boundary; stencil does not fit")]
    Stencil { index: usize, step: f64 },

    /// Construction required per-coordinate marginal CDFs but none were supplied.
    #[error("auxiliary distribution has no marginal CDFs; symmetric set construction needs them")]
    MissingMarginalCdf,

    /// The realized focal set missed every evaluation point. The framework
    /// assumes nonempty focal sets; renormalization is out of scope.
    #[error("empty focal set encountered (framework assumes nonempty focal sets)")]
    EmptyFocalSet,

    /// Fixed-point residuals stopped decreasing.
    #[error("fixed-point iteration diverged: residual {residual:.3e} non-decreasing for {stalled} iterations")]
    Divergence { residual: f64, stalled: usize },

    /// A trajectory left the certified ball around its initial value.
    #[error("trajectory left the radius-{radius} ball around its initial value (excursion {excursion:.3e})")]
    DomainExit { radius: f64, excursion: f64 },

    /// The reference slice could not be reached along the characteristic.
    #[error("characteristic did not reach the reference slice: {0}")]
    SliceNotReached(String),

    /// Traced invariants are not independent (rank-deficient Jacobian).
    #[error("invariant Jacobian rank {rank} < expected {expected}; invariants are dependent")]
    DependentInvariants { rank: usize, expected: usize },

    /// A denominator partial vanished on the evaluation grid.
    #[error("singular model: {0}")]
    SingularModel(String),

    /// Too many grid points had to be excluded for the test to conclude.
    #[error("inconclusive: {excluded} of {total} grid points excluded")]
    Inconclusive { excluded: usize, total: usize },

    /// A test was invoked on input that fails its precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Quadrature failed to converge.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// Field or density evaluation produced a non-finite value.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// Catch-all for invalid construction arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Expression parse error (user model grammar).
    #[error("expression parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ImError>;
