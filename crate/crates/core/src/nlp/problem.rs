use nalgebra::{DMatrix, DVector};

use super::dense::{dense_kkt_matrix, DenseFactor};
use super::{NlpDims, NlpError, PrimalDualPoint};
use crate::scalar::Scalar;

/// Shape information and the inequality map every problem must expose.
pub trait NlpBase<T: Scalar> {
    fn dims(&self) -> NlpDims;

    /// `h(y)`; the solver keeps this strictly negative.
    fn ineq_values(&self, y: &DVector<T>) -> DVector<T>;

    /// A strictly interior starting point, if the builder knows one.
    fn initial_point(&self, _tau: T) -> Option<PrimalDualPoint<T>> {
        None
    }
}

/// A factorized KKT Jacobian `∂r/∂z`.
pub trait KktSolve<T: Scalar> {
    fn solve(&self, rhs: &DVector<T>) -> DVector<T>;

    fn solve_matrix(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for (j, col) in rhs.column_iter().enumerate() {
            out.set_column(j, &self.solve(&col.into_owned()));
        }
        out
    }
}

/// What the Newton iteration needs: residual evaluation and a factorization
/// of its Jacobian. Problems with exploitable structure implement this
/// directly; dense problems get it from [`dense_nlp_problem!`].
pub trait NlpProblem<T: Scalar>: NlpBase<T> {
    fn residual(&self, z: &PrimalDualPoint<T>) -> DVector<T>;

    /// Factorizes `∂r/∂z`, adding `regularization` to the primal diagonal and
    /// subtracting it from the equality-multiplier diagonal.
    fn factor_kkt(
        &self,
        z: &PrimalDualPoint<T>,
        regularization: T,
    ) -> Result<Box<dyn KktSolve<T>>, NlpError>;
}

/// Dense evaluation interface of the supported problem class.
///
/// The cost is quadratic in `y` (constant Hessian), constraint Hessians are
/// constant in `y`, and any disturbance enters the cost linearly.
pub trait QuadraticNlp<T: Scalar>: NlpBase<T> {
    /// `∇_y Φ(y)`, including the disturbance term.
    fn cost_gradient(&self, y: &DVector<T>) -> DVector<T>;
    fn cost_hessian(&self) -> DMatrix<T>;

    fn eq_values(&self, y: &DVector<T>) -> DVector<T>;
    /// `n_eq × n_y`.
    fn eq_jacobian(&self, y: &DVector<T>) -> DMatrix<T>;
    /// `Σ_j w_j ∇²f_j`.
    fn eq_hessian_contraction(&self, w: &DVector<T>) -> DMatrix<T>;
    /// `(aᵀ ∇²f_j b)_j`.
    fn eq_curvature(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T>;

    /// `n_in × n_y`.
    fn ineq_jacobian(&self, y: &DVector<T>) -> DMatrix<T>;
    /// `Σ_i w_i ∇²h_i`.
    fn ineq_hessian_contraction(&self, w: &DVector<T>) -> DMatrix<T>;
    /// `(aᵀ ∇²h_i b)_i`.
    fn ineq_curvature(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T>;
}

/// Factorizes the dense KKT Jacobian of a [`QuadraticNlp`], adding
/// `regularization` to the primal diagonal and subtracting it from the
/// equality-multiplier diagonal.
pub fn dense_factor_kkt<T: Scalar, P: QuadraticNlp<T> + ?Sized>(
    problem: &P,
    z: &PrimalDualPoint<T>,
    regularization: T,
) -> Result<Box<dyn KktSolve<T>>, NlpError> {
    let mut jac = dense_kkt_matrix(problem, z);
    let d = problem.dims();
    if regularization > T::zero() {
        for i in 0..d.n_y {
            jac[(i, i)] += regularization;
        }
        for i in d.n_y..d.n_y + d.n_eq {
            jac[(i, i)] -= regularization;
        }
    }
    Ok(Box::new(DenseFactor::new(jac, "relaxed KKT Jacobian")?))
}

/// Implements [`NlpProblem`] through the dense [`QuadraticNlp`] evaluation.
/// The scalar parameter must be named `T`.
#[macro_export]
macro_rules! dense_nlp_problem {
    ([$($generics:tt)*] $ty:ty) => {
        impl<$($generics)*> $crate::nlp::NlpProblem<T> for $ty {
            fn residual(&self, z: &$crate::nlp::PrimalDualPoint<T>) -> ::nalgebra::DVector<T> {
                $crate::nlp::dense_residual(self, z)
            }

            fn factor_kkt(
                &self,
                z: &$crate::nlp::PrimalDualPoint<T>,
                regularization: T,
            ) -> ::std::result::Result<::std::boxed::Box<dyn $crate::nlp::KktSolve<T>>, $crate::nlp::NlpError> {
                $crate::nlp::dense_factor_kkt(self, z, regularization)
            }
        }
    };
}

/// Parameter derivatives needed by the sensitivity analysis.
///
/// The disturbance `d` (dimension `n_d`) enters only through a linear cost
/// term `dᵀ G y`, so `∂r/∂d = [Gᵀ; 0; 0]` and all second derivatives of the
/// residual involving `d` vanish. The policy output `g` is the first `n_d`
/// primal entries.
pub trait ParametricNlp<T: Scalar>: QuadraticNlp<T> + NlpProblem<T> {
    fn n_theta(&self) -> usize;
    fn n_d(&self) -> usize;

    /// `∂(∇_y Φ)/∂d`, an `n_y × n_d` constant matrix.
    fn cost_disturbance_jacobian(&self) -> DMatrix<T>;

    /// `∂r_τ/∂θ` at `z`, an `n_z × n_theta` matrix.
    fn residual_theta_jacobian(&self, z: &PrimalDualPoint<T>) -> DMatrix<T>;

    /// Copy of the instance with a different disturbance `d`.
    fn with_disturbance(&self, d: &DVector<T>) -> Self
    where
        Self: Sized;
}
