//! First- and second-order parametric sensitivities of a relaxed-KKT solution.
//!
//! With `J = ∂r_τ/∂z` at a solution, the first-order maps solve
//! `J ∂z/∂d = −∂r/∂d` and `J ∂z/∂θ = −∂r/∂θ`. Since `d` enters the cost
//! linearly and third primal derivatives vanish, the second-order system
//! reduces to `J ∂²z/∂dᵢ∂dⱼ = −R[∂z/∂dᵢ, ∂z/∂dⱼ]` where `R` is the second
//! directional derivative of `r_τ` in `z`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::nlp::{KktSolve, NlpError, ParametricNlp, PrimalDualPoint, QuadraticNlp};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Error)]
pub enum SensitivityError {
    #[error("factorization of the KKT Jacobian failed: {0}")]
    Factorization(#[source] NlpError),
    #[error("second-order sensitivities requested before first-order ones")]
    MissingFirstOrder,
}

/// Solution sensitivities with the KKT factorization kept for reuse.
pub struct SensitivityBundle<T: Scalar> {
    pub dz_dd: DMatrix<T>,
    pub dz_dtheta: DMatrix<T>,
    /// First `n_a` rows of `dz_dd`.
    pub dg_dd: DMatrix<T>,
    /// First `n_a` rows of `dz_dtheta`.
    pub dg_dtheta: DMatrix<T>,
    /// `d2g_dd2[k][(i, j)] = ∂²g_k/∂dᵢ∂dⱼ`, filled by [`second_order`].
    pub d2g_dd2: Option<Vec<DMatrix<T>>>,
    factor: Box<dyn KktSolve<T>>,
}

impl<T: Scalar> fmt::Debug for SensitivityBundle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SensitivityBundle")
            .field("dz_dd", &self.dz_dd)
            .field("dz_dtheta", &self.dz_dtheta)
            .field("dg_dd", &self.dg_dd)
            .field("dg_dtheta", &self.dg_dtheta)
            .field("d2g_dd2", &self.d2g_dd2)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> SensitivityBundle<T> {
    pub fn n_a(&self) -> usize {
        self.dg_dd.nrows()
    }

    /// Solves `J x = rhs` with the stored factorization.
    pub fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        self.factor.solve(rhs)
    }
}

/// `∂r/∂d = [G; 0; 0]`.
fn residual_disturbance_jacobian<T: Scalar, P: ParametricNlp<T>>(p: &P) -> DMatrix<T> {
    let dims = p.dims();
    let g = p.cost_disturbance_jacobian();
    let mut out = DMatrix::zeros(dims.n_z(), p.n_d());
    out.view_mut((0, 0), (dims.n_y, p.n_d())).copy_from(&g);
    out
}

/// Solves both first-order sensitivity systems with one factorization.
pub fn first_order<T: Scalar, P: ParametricNlp<T>>(
    p: &P,
    z: &PrimalDualPoint<T>,
) -> Result<SensitivityBundle<T>, SensitivityError> {
    let factor = p
        .factor_kkt(z, T::zero())
        .map_err(SensitivityError::Factorization)?;
    let n_a = p.n_d();
    let dz_dd = -factor.solve_matrix(&residual_disturbance_jacobian(p));
    let dz_dtheta = -factor.solve_matrix(&p.residual_theta_jacobian(z));
    Ok(SensitivityBundle {
        dg_dd: dz_dd.rows(0, n_a).into_owned(),
        dg_dtheta: dz_dtheta.rows(0, n_a).into_owned(),
        dz_dd,
        dz_dtheta,
        d2g_dd2: None,
        factor,
    })
}

/// `Σ_k Σ_l ∂²r/∂z_k∂z_l a_k b_l` for the supported problem class.
pub fn residual_curvature<T: Scalar, P: QuadraticNlp<T> + ?Sized>(
    p: &P,
    z: &PrimalDualPoint<T>,
    a: &DVector<T>,
    b: &DVector<T>,
) -> DVector<T> {
    let d = p.dims();
    let (ny, ne, ni) = (d.n_y, d.n_eq, d.n_in);
    let a_y = a.rows(0, ny).into_owned();
    let b_y = b.rows(0, ny).into_owned();
    let mut out = DVector::zeros(d.n_z());

    let mut stat = DVector::zeros(ny);
    if ne > 0 {
        let a_l = a.rows(ny, ne).into_owned();
        let b_l = b.rows(ny, ne).into_owned();
        stat += p.eq_hessian_contraction(&a_l) * &b_y + p.eq_hessian_contraction(&b_l) * &a_y;
        out.rows_mut(ny, ne).copy_from(&p.eq_curvature(&a_y, &b_y));
    }
    if ni > 0 {
        let a_m = a.rows(ny + ne, ni).into_owned();
        let b_m = b.rows(ny + ne, ni).into_owned();
        stat += p.ineq_hessian_contraction(&a_m) * &b_y + p.ineq_hessian_contraction(&b_m) * &a_y;
        let jh = p.ineq_jacobian(&z.y);
        let comp = a_m.component_mul(&(&jh * &b_y))
            + b_m.component_mul(&(&jh * &a_y))
            + z.mu.component_mul(&p.ineq_curvature(&a_y, &b_y));
        out.rows_mut(ny + ne, ni).copy_from(&comp);
    }
    out.rows_mut(0, ny).copy_from(&stat);
    out
}

/// Fills `bundle.d2g_dd2` and returns it.
pub fn second_order<'b, T: Scalar, P: ParametricNlp<T>>(
    p: &P,
    z: &PrimalDualPoint<T>,
    bundle: &'b mut SensitivityBundle<T>,
) -> &'b [DMatrix<T>] {
    let n_a = bundle.n_a();
    let mut out = vec![DMatrix::zeros(n_a, n_a); n_a];
    for i in 0..n_a {
        let zi = bundle.dz_dd.column(i).into_owned();
        for j in i..n_a {
            let zj = bundle.dz_dd.column(j).into_owned();
            let rhs = residual_curvature(p, z, &zi, &zj);
            let zij = -bundle.factor.solve(&rhs);
            for (k, m) in out.iter_mut().enumerate() {
                m[(i, j)] = zij[k];
                m[(j, i)] = zij[k];
            }
        }
    }
    bundle.d2g_dd2 = Some(out);
    bundle.d2g_dd2.as_deref().expect("just set")
}

/// `(∇_θ π, ∂g/∂d)` with `∇_θ π = (∂g/∂θ)ᵀ`.
pub fn policy_jacobians<T: Scalar>(bundle: &SensitivityBundle<T>) -> (DMatrix<T>, DMatrix<T>) {
    (bundle.dg_dtheta.transpose(), bundle.dg_dd.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{solve, SolverConfig};
    use crate::toy::{DiscProblem, UnconstrainedQuadratic};

    #[test]
    fn unconstrained_maps_are_linear() {
        let p = UnconstrainedQuadratic::<f64>::new(DVector::from_vec(vec![1.0, 2.0, -0.5]));
        let z = solve(&p, &SolverConfig::default(), None).unwrap().point;
        let mut b = first_order(&p, &z).unwrap();
        assert!((&b.dg_dd + DMatrix::identity(3, 3)).amax() < 1e-14);
        assert!((&b.dg_dtheta - DMatrix::identity(3, 3)).amax() < 1e-14);
        let d2 = second_order(&p, &z, &mut b);
        assert!(d2.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn symmetric_disc_point_closed_form() {
        let p = DiscProblem::<f64>::new([0.0, 0.0, 1.0]);
        let z = solve(&p, &SolverConfig::default(), None).unwrap().point;
        assert!((z.mu[0] - 0.01).abs() < 1e-14);
        let mut b = first_order(&p, &z).unwrap();
        let expected = -1.0 / 1.02;
        assert!((b.dg_dd[(0, 0)] - expected).abs() < 1e-12);
        assert!((b.dg_dd[(1, 1)] - expected).abs() < 1e-12);
        assert!(b.dg_dd[(0, 1)].abs() < 1e-14);
        let (grad, _) = policy_jacobians(&b);
        assert!((grad[(0, 0)] + expected).abs() < 1e-12);
        assert!(grad.row(2).amax() < 1e-14);
        let d2 = second_order(&p, &z, &mut b);
        assert!(d2.iter().all(|m| m.amax() < 1e-14));
    }
}
