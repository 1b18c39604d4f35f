//! Small parametric problems with known solutions.

use nalgebra::{DMatrix, DVector};

use crate::nlp::{NlpBase, NlpDims, ParametricNlp, PrimalDualPoint, QuadraticNlp};
use crate::scalar::Scalar;

/// `min ½‖y − (θ₁, θ₂)‖² + dᵀy  s.t.  ‖y‖² ≤ θ₃`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscProblem<T: Scalar> {
    pub theta: [T; 3],
    pub d: DVector<T>,
}

impl<T: Scalar> DiscProblem<T> {
    pub fn new(theta: [T; 3]) -> Self {
        Self {
            theta,
            d: DVector::zeros(2),
        }
    }

    fn center(&self) -> DVector<T> {
        DVector::from_vec(vec![self.theta[0], self.theta[1]])
    }
}

impl<T: Scalar> NlpBase<T> for DiscProblem<T> {
    fn dims(&self) -> NlpDims {
        NlpDims::new(2, 0, 1)
    }

    fn ineq_values(&self, y: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, y.norm_squared() - self.theta[2])
    }

    fn initial_point(&self, tau: T) -> Option<PrimalDualPoint<T>> {
        if !(self.theta[2] > T::zero()) {
            return None;
        }
        let y = DVector::zeros(2);
        let h = self.ineq_values(&y);
        Some(PrimalDualPoint::centered(y, &h, 0, tau))
    }
}

crate::dense_nlp_problem!([T: Scalar] DiscProblem<T>);

impl<T: Scalar> QuadraticNlp<T> for DiscProblem<T> {
    fn cost_gradient(&self, y: &DVector<T>) -> DVector<T> {
        y - self.center() + &self.d
    }

    fn cost_hessian(&self) -> DMatrix<T> {
        DMatrix::identity(2, 2)
    }

    fn eq_values(&self, _y: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn eq_jacobian(&self, _y: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(0, 2)
    }

    fn eq_hessian_contraction(&self, _w: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(2, 2)
    }

    fn eq_curvature(&self, _a: &DVector<T>, _b: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn ineq_jacobian(&self, y: &DVector<T>) -> DMatrix<T> {
        let two = T::one() + T::one();
        DMatrix::from_row_slice(1, 2, &[two * y[0], two * y[1]])
    }

    fn ineq_hessian_contraction(&self, w: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(2, 2) * (w[0] + w[0])
    }

    fn ineq_curvature(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        let ab = a.dot(b);
        DVector::from_element(1, ab + ab)
    }
}

impl<T: Scalar> ParametricNlp<T> for DiscProblem<T> {
    fn n_theta(&self) -> usize {
        3
    }

    fn n_d(&self) -> usize {
        2
    }

    fn cost_disturbance_jacobian(&self) -> DMatrix<T> {
        DMatrix::identity(2, 2)
    }

    fn residual_theta_jacobian(&self, z: &PrimalDualPoint<T>) -> DMatrix<T> {
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 0)] = -T::one();
        j[(1, 1)] = -T::one();
        j[(2, 2)] = -z.mu[0];
        j
    }

    fn with_disturbance(&self, d: &DVector<T>) -> Self {
        Self {
            theta: self.theta,
            d: d.clone(),
        }
    }
}

/// `min ½‖y − θ‖² + dᵀy` without constraints; `y* = θ − d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedQuadratic<T: Scalar> {
    pub theta: DVector<T>,
    pub d: DVector<T>,
}

impl<T: Scalar> UnconstrainedQuadratic<T> {
    pub fn new(theta: DVector<T>) -> Self {
        let n = theta.len();
        Self {
            theta,
            d: DVector::zeros(n),
        }
    }

    fn n(&self) -> usize {
        self.theta.len()
    }
}

impl<T: Scalar> NlpBase<T> for UnconstrainedQuadratic<T> {
    fn dims(&self) -> NlpDims {
        NlpDims::new(self.n(), 0, 0)
    }

    fn ineq_values(&self, _y: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn initial_point(&self, tau: T) -> Option<PrimalDualPoint<T>> {
        Some(PrimalDualPoint::new(
            DVector::zeros(self.n()),
            DVector::zeros(0),
            DVector::zeros(0),
            tau,
        ))
    }
}

crate::dense_nlp_problem!([T: Scalar] UnconstrainedQuadratic<T>);

impl<T: Scalar> QuadraticNlp<T> for UnconstrainedQuadratic<T> {
    fn cost_gradient(&self, y: &DVector<T>) -> DVector<T> {
        y - &self.theta + &self.d
    }

    fn cost_hessian(&self) -> DMatrix<T> {
        DMatrix::identity(self.n(), self.n())
    }

    fn eq_values(&self, _y: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn eq_jacobian(&self, _y: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(0, self.n())
    }

    fn eq_hessian_contraction(&self, _w: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.n(), self.n())
    }

    fn eq_curvature(&self, _a: &DVector<T>, _b: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn ineq_jacobian(&self, _y: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(0, self.n())
    }

    fn ineq_hessian_contraction(&self, _w: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.n(), self.n())
    }

    fn ineq_curvature(&self, _a: &DVector<T>, _b: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }
}

impl<T: Scalar> ParametricNlp<T> for UnconstrainedQuadratic<T> {
    fn n_theta(&self) -> usize {
        self.n()
    }

    fn n_d(&self) -> usize {
        self.n()
    }

    fn cost_disturbance_jacobian(&self) -> DMatrix<T> {
        DMatrix::identity(self.n(), self.n())
    }

    fn residual_theta_jacobian(&self, _z: &PrimalDualPoint<T>) -> DMatrix<T> {
        -DMatrix::identity(self.n(), self.n())
    }

    fn with_disturbance(&self, d: &DVector<T>) -> Self {
        Self {
            theta: self.theta.clone(),
            d: d.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{evaluate_residual, solve, SolverConfig};

    fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn hand_evaluated_residual_blocks() {
        let p = DiscProblem::<f64>::new([0.5, 0.0, 1.0]);
        let z = PrimalDualPoint::new(
            DVector::from_vec(vec![0.5, 0.0]),
            DVector::zeros(0),
            DVector::from_element(1, 0.1),
            1e-2,
        );
        let r = evaluate_residual(&p, &z).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-15);
        assert!(r[1].abs() < 1e-15);
        assert!((r[2] + 0.065).abs() < 1e-15);
    }

    #[test]
    fn exact_complementarity_at_origin() {
        let p = DiscProblem::<f64>::new([0.0, 0.0, 1.0]);
        let z = p.initial_point(1e-2).unwrap();
        let r = evaluate_residual(&p, &z).unwrap();
        assert_eq!(r[2], 0.0);
    }

    #[test]
    fn interior_solution_matches_scalar_oracle() {
        let tau = 1e-2;
        let p = DiscProblem::<f64>::new([0.5, 0.0, 1.0]);
        let sol = solve(&p, &SolverConfig::default().with_tau(tau), None).unwrap();
        // u − 0.5 + 2μu = 0 with μ = τ/(1 − u²)
        let u = bisect(0.0, 0.5, |u| u - 0.5 + 2.0 * tau / (1.0 - u * u) * u);
        assert!((sol.point.y[0] - u).abs() < 1e-10);
        assert!(sol.point.y[1].abs() < 1e-12);
    }

    #[test]
    fn small_tau_approaches_projection() {
        let p = DiscProblem::<f64>::new([2.0, 0.0, 1.0]);
        let sol = solve(&p, &SolverConfig::default().with_tau(1e-6), None).unwrap();
        assert!((sol.point.y[0] - 1.0).abs() < 1e-3);
        assert!(sol.point.y[1].abs() < 1e-3);
    }

    #[test]
    fn unconstrained_single_step() {
        let p = UnconstrainedQuadratic::<f64>::new(DVector::from_vec(vec![3.0, -1.0]));
        let sol = solve(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.point.y[0] - 3.0).abs() < 1e-14);
        assert!((sol.point.y[1] + 1.0).abs() < 1e-14);
    }
}
