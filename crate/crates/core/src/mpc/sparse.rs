use nalgebra::{DMatrix, DVector};

use super::{MpcDims, MpcError, ThetaParams};
use crate::nlp::{dense_residual, NlpBase, NlpDims, ParametricNlp, PrimalDualPoint, QuadraticNlp};
use crate::scalar::{lit, Scalar};

/// Scenario MPC over nominal inputs and all scenario states.
///
/// Primal layout: `u_{0,0..N−1}` followed by `x_{j,k}` for `j = 0..=N_M`,
/// `k = 1..=N` (scenario-major). Equalities are the scenario dynamics in the
/// same order, inequalities are `‖x_{j,k}‖² − 1 ≤ 0` in the same order. All
/// maps are linear in `y` except the inequalities.
#[derive(Debug, Clone)]
pub struct ScenarioMpc<T: Scalar> {
    theta: ThetaParams<T>,
    s: DVector<T>,
    dims: MpcDims,
    d: DVector<T>,
    hessian: DMatrix<T>,
    /// Cost gradient at `y = 0` without the disturbance term.
    linear: DVector<T>,
    eq_mat: DMatrix<T>,
    eq_rhs: DVector<T>,
}

/// Builds the scenario MPC at state `s` with exploration disturbance `d`.
pub fn build_mpc_nlp<T: Scalar>(
    theta: &ThetaParams<T>,
    s: &DVector<T>,
    dims: MpcDims,
    d: &DVector<T>,
) -> Result<ScenarioMpc<T>, MpcError> {
    theta.check(&dims)?;
    if s.len() != dims.n_s {
        return Err(MpcError::DimensionMismatch {
            what: "state",
            expected: dims.n_s,
            got: s.len(),
        });
    }
    if d.len() != dims.n_a {
        return Err(MpcError::DimensionMismatch {
            what: "disturbance",
            expected: dims.n_a,
            got: d.len(),
        });
    }
    let mut p = ScenarioMpc {
        theta: theta.clone(),
        s: s.clone(),
        dims,
        d: d.clone(),
        hessian: DMatrix::zeros(0, 0),
        linear: DVector::zeros(0),
        eq_mat: DMatrix::zeros(0, 0),
        eq_rhs: DVector::zeros(0),
    };
    p.assemble();
    Ok(p)
}

impl<T: Scalar> ScenarioMpc<T> {
    fn n_y(&self) -> usize {
        self.dims.n_inputs() + self.dims.n_state_constraints() * self.dims.n_s
    }

    /// Offset of `x_{j,k}` (`k ≥ 1`) in `y`.
    fn x_offset(&self, j: usize, k: usize) -> usize {
        self.dims.n_inputs() + (j * self.dims.horizon + k - 1) * self.dims.n_s
    }

    fn x_selector(&self, j: usize, k: usize) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dims.n_s, self.n_y());
        m.view_mut((0, self.x_offset(j, k)), (self.dims.n_s, self.dims.n_s))
            .fill_with_identity();
        m
    }

    /// `U_{j,k}` with `u_{j,k} = U_{j,k} y` (the initial states cancel).
    fn u_map(&self, j: usize, k: usize) -> DMatrix<T> {
        let (na, n_y) = (self.dims.n_a, self.n_y());
        let mut m = DMatrix::zeros(na, n_y);
        m.view_mut((0, k * na), (na, na)).fill_with_identity();
        if j > 0 && k > 0 {
            m -= &self.theta.k * self.x_selector(j, k);
            m += &self.theta.k * self.x_selector(0, k);
        }
        m
    }

    fn assemble(&mut self) {
        let (n, ns) = (self.dims.horizon, self.dims.n_s);
        let n_y = self.n_y();
        let two = T::one() + T::one();
        let mut hessian = DMatrix::zeros(n_y, n_y);
        let mut linear = DVector::zeros(n_y);
        let n_eq = self.dims.n_state_constraints() * ns;
        let mut eq_mat = DMatrix::zeros(n_eq, n_y);
        let mut eq_rhs = DVector::zeros(n_eq);
        for j in 0..=self.dims.n_models {
            let w = self.theta.scenario_offset(j);
            for k in 0..n {
                let u = self.u_map(j, k);
                hessian += u.tr_mul(&u) * two;
                linear -= u.tr_mul(&self.theta.u_bar) * two;

                let xs = self.x_selector(j, k + 1);
                hessian += xs.tr_mul(&xs) * two;
                linear -= xs.tr_mul(&self.theta.x_bar) * two;

                let row = (j * n + k) * ns;
                let mut block = xs - &self.theta.b0 * &u;
                let mut rhs = &self.theta.bias + &w;
                if k == 0 {
                    rhs += &self.theta.a0 * &self.s;
                } else {
                    block -= &self.theta.a0 * self.x_selector(j, k);
                }
                eq_mat.view_mut((row, 0), (ns, n_y)).copy_from(&block);
                eq_rhs.rows_mut(row, ns).copy_from(&rhs);
            }
        }
        self.hessian = hessian;
        self.linear = linear;
        self.eq_mat = eq_mat;
        self.eq_rhs = eq_rhs;
    }

    fn x_block(&self, y: &DVector<T>, j: usize, k: usize) -> DVector<T> {
        if k == 0 {
            self.s.clone()
        } else {
            y.rows(self.x_offset(j, k), self.dims.n_s).into_owned()
        }
    }

    /// `x_{j,k}` for all scenarios and `k = 0..=N`.
    pub fn states(&self, y: &DVector<T>) -> Vec<Vec<DVector<T>>> {
        (0..=self.dims.n_models)
            .map(|j| {
                (0..=self.dims.horizon)
                    .map(|k| self.x_block(y, j, k))
                    .collect()
            })
            .collect()
    }

    /// `u_{j,k}` for all scenarios and `k = 0..N`.
    pub fn inputs(&self, y: &DVector<T>) -> Vec<Vec<DVector<T>>> {
        (0..=self.dims.n_models)
            .map(|j| {
                (0..self.dims.horizon)
                    .map(|k| self.u_map(j, k) * y)
                    .collect()
            })
            .collect()
    }

    pub fn theta(&self) -> &ThetaParams<T> {
        &self.theta
    }

    pub fn mpc_dims(&self) -> MpcDims {
        self.dims
    }
}

impl<T: Scalar> NlpBase<T> for ScenarioMpc<T> {
    fn dims(&self) -> NlpDims {
        let nc = self.dims.n_state_constraints();
        NlpDims::new(self.n_y(), nc * self.dims.n_s, nc)
    }

    fn ineq_values(&self, y: &DVector<T>) -> DVector<T> {
        let ns = self.dims.n_s;
        DVector::from_fn(self.dims.n_state_constraints(), |i, _| {
            let off = self.dims.n_inputs() + i * ns;
            y.rows(off, ns).norm_squared() - T::one()
        })
    }

    /// Nominal rollout under `u = ū`, scaled into the unit ball and copied
    /// to every scenario; `μ = τ/(−h)`.
    fn initial_point(&self, tau: T) -> Option<PrimalDualPoint<T>> {
        let (n, na) = (self.dims.horizon, self.dims.n_a);
        let mut traj = Vec::with_capacity(n);
        let mut x = self.s.clone();
        for _ in 0..n {
            x = self.theta.nominal_step(&x, &self.theta.u_bar);
            traj.push(x.clone());
        }
        let max_norm = traj.iter().fold(T::zero(), |m, x| m.max(x.norm()));
        let scale = lit::<T>(0.99) / max_norm.max(T::one());
        let mut y = DVector::zeros(self.n_y());
        for k in 0..n {
            y.rows_mut(k * na, na).copy_from(&self.theta.u_bar);
        }
        for j in 0..=self.dims.n_models {
            for (k, xk) in traj.iter().enumerate() {
                let off = self.x_offset(j, k + 1);
                y.rows_mut(off, self.dims.n_s).copy_from(&(xk * scale));
            }
        }
        let h = self.ineq_values(&y);
        if h.iter().any(|&v| !(v < T::zero())) {
            return None;
        }
        Some(PrimalDualPoint::centered(y, &h, self.dims().n_eq, tau))
    }
}

crate::dense_nlp_problem!([T: Scalar] ScenarioMpc<T>);

impl<T: Scalar> QuadraticNlp<T> for ScenarioMpc<T> {
    fn cost_gradient(&self, y: &DVector<T>) -> DVector<T> {
        let mut g = &self.hessian * y + &self.linear;
        let mut first = g.rows_mut(0, self.dims.n_a);
        first += &self.d;
        g
    }

    fn cost_hessian(&self) -> DMatrix<T> {
        self.hessian.clone()
    }

    fn eq_values(&self, y: &DVector<T>) -> DVector<T> {
        &self.eq_mat * y - &self.eq_rhs
    }

    fn eq_jacobian(&self, _y: &DVector<T>) -> DMatrix<T> {
        self.eq_mat.clone()
    }

    fn eq_hessian_contraction(&self, _w: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.n_y(), self.n_y())
    }

    fn eq_curvature(&self, _a: &DVector<T>, _b: &DVector<T>) -> DVector<T> {
        DVector::zeros(self.dims().n_eq)
    }

    fn ineq_jacobian(&self, y: &DVector<T>) -> DMatrix<T> {
        let ns = self.dims.n_s;
        let two = T::one() + T::one();
        let mut jac = DMatrix::zeros(self.dims.n_state_constraints(), self.n_y());
        for i in 0..self.dims.n_state_constraints() {
            let off = self.dims.n_inputs() + i * ns;
            for c in 0..ns {
                jac[(i, off + c)] = two * y[off + c];
            }
        }
        jac
    }

    fn ineq_hessian_contraction(&self, w: &DVector<T>) -> DMatrix<T> {
        let ns = self.dims.n_s;
        let two = T::one() + T::one();
        let mut h = DMatrix::zeros(self.n_y(), self.n_y());
        for i in 0..self.dims.n_state_constraints() {
            let off = self.dims.n_inputs() + i * ns;
            for c in 0..ns {
                h[(off + c, off + c)] = two * w[i];
            }
        }
        h
    }

    fn ineq_curvature(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        let ns = self.dims.n_s;
        let two = T::one() + T::one();
        DVector::from_fn(self.dims.n_state_constraints(), |i, _| {
            let off = self.dims.n_inputs() + i * ns;
            two * a.rows(off, ns).dot(&b.rows(off, ns))
        })
    }
}

impl<T: Scalar> ParametricNlp<T> for ScenarioMpc<T> {
    fn n_theta(&self) -> usize {
        self.dims.layout().len()
    }

    fn n_d(&self) -> usize {
        self.dims.n_a
    }

    fn cost_disturbance_jacobian(&self) -> DMatrix<T> {
        let mut g = DMatrix::zeros(self.n_y(), self.dims.n_a);
        g.view_mut((0, 0), (self.dims.n_a, self.dims.n_a))
            .fill_with_identity();
        g
    }

    /// The residual is a polynomial of degree two in θ at fixed `z`, so a
    /// central difference with unit step is exact.
    fn residual_theta_jacobian(&self, z: &PrimalDualPoint<T>) -> DMatrix<T> {
        let layout = self.dims.layout();
        let flat = self.theta.flatten();
        let half = lit::<T>(0.5);
        let mut out = DMatrix::zeros(self.dims().n_z(), layout.len());
        for p in 0..layout.len() {
            let shifted = |sign: T| {
                let mut v = flat.clone();
                v[p] += sign;
                let th = ThetaParams::unflatten(&v, layout).expect("layout length");
                let inst = build_mpc_nlp(&th, &self.s, self.dims, &self.d).expect("same dims");
                dense_residual(&inst, z)
            };
            let col = (shifted(T::one()) - shifted(-T::one())) * half;
            out.set_column(p, &col);
        }
        out
    }

    fn with_disturbance(&self, d: &DVector<T>) -> Self {
        let mut c = self.clone();
        c.d = d.clone();
        c
    }
}
