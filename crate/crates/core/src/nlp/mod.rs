//! Primal-dual interior-point solver for structured quadratically-constrained
//! NLPs.
//!
//! Problems are written as
//!
//! ```text
//! min_y  Φ(y) + dᵀ G y    s.t.  f(y) = 0,  h(y) ≤ 0
//! ```
//!
//! and solved through the relaxed KKT system
//!
//! ```text
//! r_τ(z) = [ ∇Φ + ∇h μ + ∇f λ ;  f ;  diag(μ) h + τ ] = 0,   h < 0, μ > 0
//! ```
//!
//! with `τ` held fixed for the whole solve. Supported problems have at most
//! quadratic costs and at most quadratic/bilinear constraints, so every
//! third-order primal derivative vanishes.

mod bordered;
mod dense;
mod phase_one;
mod point;
mod problem;
mod solver;

pub use bordered::{BorderedBlockFactor, BorderedBlocks, LocalBlock};
pub use dense::{dense_kkt_matrix, dense_residual, DenseFactor};
pub use phase_one::find_interior_point;
pub use point::{NlpDims, PrimalDualPoint};
pub use problem::{dense_factor_kkt, KktSolve, NlpBase, NlpProblem, ParametricNlp, QuadraticNlp};
pub use solver::{evaluate_residual, newton_step, solve, NewtonStep, SolveReport, SolverConfig};

use thiserror::Error;

/// Failures of the interior-point machinery.
#[derive(Debug, Clone, Error)]
pub enum NlpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("singular KKT matrix in {context} after regularization {regularization:e}")]
    Singular {
        context: &'static str,
        regularization: f64,
    },
    #[error("no strictly interior starting point (h < 0, μ > 0) available")]
    NotInterior,
    #[error("line search stalled at residual {residual_norm:e} after {iterations} iterations")]
    LineSearch {
        iterations: usize,
        residual_norm: f64,
        last_iterate: Vec<f64>,
    },
    #[error("maximum Newton iterations ({iterations}) reached, residual {residual_norm:e}")]
    MaxIterations {
        iterations: usize,
        residual_norm: f64,
        last_iterate: Vec<f64>,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}
