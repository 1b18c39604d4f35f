use nalgebra::{DMatrix, DVector};

use super::{newton_step, NlpBase, NlpDims, NlpError, PrimalDualPoint, QuadraticNlp, SolverConfig};
use crate::scalar::{lit, Scalar};

/// Feasibility problem `min t + ½ε(‖y − y₀‖² + t²)` s.t. `h(y) ≤ t`, `t ≥ −1`.
struct PhaseOne<'a, T: Scalar, P: ?Sized> {
    inner: &'a P,
    anchor: DVector<T>,
    eps: T,
}

impl<T: Scalar, P: QuadraticNlp<T> + ?Sized> PhaseOne<'_, T, P> {
    fn split<'v>(&self, y: &'v DVector<T>) -> (nalgebra::DVectorView<'v, T>, T) {
        let n = self.anchor.len();
        (y.rows(0, n), y[n])
    }
}

impl<T: Scalar, P: QuadraticNlp<T> + ?Sized> NlpBase<T> for PhaseOne<'_, T, P> {
    fn dims(&self) -> NlpDims {
        let d = self.inner.dims();
        NlpDims::new(d.n_y + 1, 0, d.n_in + 1)
    }

    fn ineq_values(&self, y: &DVector<T>) -> DVector<T> {
        let (x, t) = self.split(y);
        let h = self.inner.ineq_values(&x.into_owned());
        let mut out = DVector::zeros(h.len() + 1);
        for i in 0..h.len() {
            out[i] = h[i] - t;
        }
        out[h.len()] = -t - T::one();
        out
    }
}

crate::dense_nlp_problem!([T: Scalar, P: QuadraticNlp<T> + ?Sized] PhaseOne<'_, T, P>);

impl<T: Scalar, P: QuadraticNlp<T> + ?Sized> QuadraticNlp<T> for PhaseOne<'_, T, P> {
    fn cost_gradient(&self, y: &DVector<T>) -> DVector<T> {
        let (x, t) = self.split(y);
        let n = self.anchor.len();
        let mut g = DVector::zeros(n + 1);
        g.rows_mut(0, n).copy_from(&((x - &self.anchor) * self.eps));
        g[n] = T::one() + self.eps * t;
        g
    }

    fn cost_hessian(&self) -> DMatrix<T> {
        DMatrix::identity(self.anchor.len() + 1, self.anchor.len() + 1) * self.eps
    }

    fn eq_values(&self, _y: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn eq_jacobian(&self, _y: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(0, self.anchor.len() + 1)
    }

    fn eq_hessian_contraction(&self, _w: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.anchor.len() + 1, self.anchor.len() + 1)
    }

    fn eq_curvature(&self, _a: &DVector<T>, _b: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn ineq_jacobian(&self, y: &DVector<T>) -> DMatrix<T> {
        let (x, _) = self.split(y);
        let jh = self.inner.ineq_jacobian(&x.into_owned());
        let (m, n) = jh.shape();
        let mut j = DMatrix::zeros(m + 1, n + 1);
        j.view_mut((0, 0), (m, n)).copy_from(&jh);
        for i in 0..=m {
            j[(i, n)] = -T::one();
        }
        j
    }

    fn ineq_hessian_contraction(&self, w: &DVector<T>) -> DMatrix<T> {
        let n = self.anchor.len();
        let m = w.len() - 1;
        let inner = self
            .inner
            .ineq_hessian_contraction(&w.rows(0, m).into_owned());
        let mut h = DMatrix::zeros(n + 1, n + 1);
        h.view_mut((0, 0), (n, n)).copy_from(&inner);
        h
    }

    fn ineq_curvature(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        let n = self.anchor.len();
        let c = self
            .inner
            .ineq_curvature(&a.rows(0, n).into_owned(), &b.rows(0, n).into_owned());
        let mut out = DVector::zeros(c.len() + 1);
        out.rows_mut(0, c.len()).copy_from(&c);
        out
    }
}

/// Finds `y` with `h(y) < 0` for an inequality-only problem, starting from
/// `anchor`. Newton iterations on a relaxed feasibility problem, with `τ` and
/// the proximal weight decreased together, stop as soon as the original
/// inequalities are strictly satisfied with margin.
pub fn find_interior_point<T: Scalar, P: QuadraticNlp<T> + ?Sized>(
    problem: &P,
    anchor: &DVector<T>,
    config: &SolverConfig<T>,
) -> Result<DVector<T>, NlpError> {
    let d = problem.dims();
    if d.n_eq != 0 {
        return Err(NlpError::InvalidConfig(
            "phase one supports inequality-only problems".into(),
        ));
    }
    let margin = lit::<T>(1e-6);
    let h0 = problem.ineq_values(anchor);
    let hmax = h0.iter().fold(-T::one(), |m, &v| m.max(v));
    if hmax < -margin {
        return Ok(anchor.clone());
    }
    let mut y = DVector::zeros(d.n_y + 1);
    y.rows_mut(0, d.n_y).copy_from(anchor);
    y[d.n_y] = hmax + T::one();
    let mut z: Option<PrimalDualPoint<T>> = None;
    let mut tau = lit::<T>(1e-2);
    let tau_min = lit::<T>(1e-10);
    while tau >= tau_min {
        let p1 = PhaseOne {
            inner: problem,
            anchor: anchor.clone(),
            eps: tau,
        };
        let cfg = SolverConfig { tau, ..*config };
        let mut zk = match z.take() {
            Some(mut w) => {
                w.tau = tau;
                w
            }
            None => PrimalDualPoint::centered(y.clone(), &p1.ineq_values(&y), 0, tau),
        };
        for _ in 0..config.max_newton_iterations {
            let step = newton_step(&p1, &zk, &cfg)?;
            zk = step.next;
            let x = zk.y.rows(0, d.n_y).into_owned();
            let worst = problem
                .ineq_values(&x)
                .iter()
                .fold(-T::one(), |m, &v| m.max(v));
            if worst < -margin {
                return Ok(x);
            }
            if step.residual_norm <= tau * lit(1e-2) {
                break;
            }
        }
        z = Some(zk);
        tau *= lit(0.1);
    }
    Err(NlpError::NotInterior)
}
