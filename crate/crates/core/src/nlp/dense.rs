use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{KktSolve, NlpError, PrimalDualPoint, QuadraticNlp};
use crate::scalar::{lit, Scalar};

/// Stacked relaxed-KKT residual `[∇Φ + Jhᵀμ + Jfᵀλ; f; μ∘h + τ]`.
pub fn dense_residual<T: Scalar, P: QuadraticNlp<T> + ?Sized>(
    p: &P,
    z: &PrimalDualPoint<T>,
) -> DVector<T> {
    let d = p.dims();
    let mut r = DVector::zeros(d.n_z());
    let mut stat = p.cost_gradient(&z.y);
    if d.n_in > 0 {
        stat += p.ineq_jacobian(&z.y).tr_mul(&z.mu);
    }
    if d.n_eq > 0 {
        stat += p.eq_jacobian(&z.y).tr_mul(&z.lambda);
        r.rows_mut(d.n_y, d.n_eq).copy_from(&p.eq_values(&z.y));
    }
    r.rows_mut(0, d.n_y).copy_from(&stat);
    if d.n_in > 0 {
        let h = p.ineq_values(&z.y);
        let comp = h.component_mul(&z.mu).add_scalar(z.tau);
        r.rows_mut(d.n_y + d.n_eq, d.n_in).copy_from(&comp);
    }
    r
}

/// Dense `∂r_τ/∂z`.
pub fn dense_kkt_matrix<T: Scalar, P: QuadraticNlp<T> + ?Sized>(
    p: &P,
    z: &PrimalDualPoint<T>,
) -> DMatrix<T> {
    let d = p.dims();
    let (ny, ne, ni) = (d.n_y, d.n_eq, d.n_in);
    let mut jac = DMatrix::zeros(d.n_z(), d.n_z());

    let mut hess = p.cost_hessian();
    if ni > 0 {
        hess += p.ineq_hessian_contraction(&z.mu);
    }
    if ne > 0 {
        hess += p.eq_hessian_contraction(&z.lambda);
        let jf = p.eq_jacobian(&z.y);
        jac.view_mut((0, ny), (ny, ne)).copy_from(&jf.transpose());
        jac.view_mut((ny, 0), (ne, ny)).copy_from(&jf);
    }
    jac.view_mut((0, 0), (ny, ny)).copy_from(&hess);
    if ni > 0 {
        let jh = p.ineq_jacobian(&z.y);
        let h = p.ineq_values(&z.y);
        jac.view_mut((0, ny + ne), (ny, ni))
            .copy_from(&jh.transpose());
        let mut low = jh;
        for (i, mut row) in low.row_iter_mut().enumerate() {
            row *= z.mu[i];
        }
        jac.view_mut((ny + ne, 0), (ni, ny)).copy_from(&low);
        for i in 0..ni {
            jac[(ny + ne + i, ny + ne + i)] = h[i];
        }
    }
    jac
}

/// Partial-pivoting LU with a pivot-ratio singularity check.
pub struct DenseFactor<T: Scalar> {
    lu: LU<T, Dyn, Dyn>,
}

impl<T: Scalar> DenseFactor<T> {
    pub fn new(matrix: DMatrix<T>, context: &'static str) -> Result<Self, NlpError> {
        let n = matrix.nrows();
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::Singular {
                context,
                regularization: 0.0,
            });
        }
        let lu = matrix.lu();
        if n > 0 {
            let u = lu.u();
            let diag = u.diagonal();
            let max = diag.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let min = diag.iter().fold(max, |m, v| m.min(v.abs()));
            let threshold = max * T::eps() * lit::<T>(n as f64);
            if max == T::zero() || min <= threshold {
                return Err(NlpError::Singular {
                    context,
                    regularization: 0.0,
                });
            }
        }
        Ok(Self { lu })
    }
}

impl<T: Scalar> KktSolve<T> for DenseFactor<T> {
    fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        self.lu.solve(rhs).expect("checked nonsingular")
    }

    fn solve_matrix(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        self.lu.solve(rhs).expect("checked nonsingular")
    }
}
