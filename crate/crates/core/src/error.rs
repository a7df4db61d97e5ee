//! Crate-wide error type.

use core::fmt;

/// Errors produced by grid construction, covariance assembly, the implicit
/// solvers and the diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration or parameter range; carries a static reason.
    Config(&'static str),
    /// A field vector does not match the grid node count.
    LengthMismatch { expected: usize, got: usize },
    /// Cholesky pivot fell below the positive-definiteness floor.
    NonPositiveDefinite { pivot_index: usize, pivot: f64 },
    /// The requested diagnostic is not defined for this model or grid.
    UnsupportedDiagnostic(&'static str),
    /// Fixed-point iteration failed to converge within the iteration budget.
    FixedPointDiverged { residual: f64, iterations: usize },
    /// A linear solve left a residual above the accept threshold.
    SolveResidual { residual: f64 },
    /// NaN or infinity appeared in the field.
    Overflow,
    /// An operation that needs a nonzero field was given the zero field.
    ZeroField,
    /// The peak of |u| is not unique enough to locate a blow-up center.
    AmbiguousCenter,
    /// The refinement window reaches the edge of the computational box.
    RefineAtBoundary,
    /// Statistics were requested over too few blow-up outcomes.
    TooFewBlowUps { have: usize },
    /// A covariance factor was used with a grid it was not built for.
    GridMismatch,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Error::NonPositiveDefinite { pivot_index, pivot } => write!(
                f,
                "covariance not positive definite: pivot {pivot:e} at index {pivot_index}"
            ),
            Error::UnsupportedDiagnostic(msg) => write!(f, "unsupported diagnostic: {msg}"),
            Error::FixedPointDiverged { residual, iterations } => write!(
                f,
                "fixed-point iteration did not converge: residual {residual:e} after {iterations} iterations"
            ),
            Error::SolveResidual { residual } => {
                write!(f, "linear solve residual too large: {residual:e}")
            }
            Error::Overflow => write!(f, "non-finite value in field"),
            Error::ZeroField => write!(f, "operation undefined on the zero field"),
            Error::AmbiguousCenter => write!(f, "peak location ambiguous (plateau or multiple maxima)"),
            Error::RefineAtBoundary => {
                write!(f, "refinement window touches the domain boundary")
            }
            Error::TooFewBlowUps { have } => {
                write!(f, "need at least 2 blow-up outcomes, have {have}")
            }
            Error::GridMismatch => write!(f, "covariance factor does not match this grid"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
