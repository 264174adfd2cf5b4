//! Error type shared by the solver modules.

use thiserror::Error;

/// Errors surfaced by the numerical routines.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Two grids that must share a lattice do not.
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    /// A weighted Potts instance where every weight is zero has no
    /// determined segment values.
    #[error("all data weights are zero; segment values are undetermined")]
    AllZeroWeights,

    /// The forward-mapped lattice collapsed so that no target pixel is
    /// covered by a non-degenerate triangle.
    #[error("degenerate triangulation: forward map covers no target pixel")]
    DegenerateTriangulation,

    /// A matrix that must be inverted has zero (or non-positive, where
    /// required) determinant.
    #[error("singular matrix at pixel ({x}, {y}): det = {det}")]
    SingularMatrix { x: usize, y: usize, det: f64 },

    /// An operation that requires det V > 0 everywhere hit a violation.
    #[error("non-positive determinant at pixel ({x}, {y}): det = {det}")]
    NonPositiveDeterminant { x: usize, y: usize, det: f64 },

    /// An iterative linear solver failed to reach its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverDiverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A data point falls outside the spline mesh.
    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideMesh { x: f64, y: f64 },

    /// Invalid configuration (parameter ranges, mesh/quadrature setup,
    /// dataset shape).
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
