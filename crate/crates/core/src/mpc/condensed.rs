//! Input-only form of the scenario MPC.
//!
//! Because all scenarios share the input sequence and the ancillary law
//! cancels the input dependence of `x_{j,k} − x_{0,k}`, every scenario state is
//! affine in the nominal inputs with a scenario-independent linear part:
//! `x_{j,k} = S_k u + q_{j,k}` and `u_{j,k} = P_k u + t_{j,k}`.

use nalgebra::{DMatrix, DVector};

use super::{MpcDims, MpcError, ThetaParams};
use crate::nlp::{
    find_interior_point, NlpBase, NlpDims, ParametricNlp, PrimalDualPoint, QuadraticNlp,
    SolverConfig,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Propagation<T: Scalar> {
    /// `S_k`, `k = 0..=N`.
    s_mats: Vec<DMatrix<T>>,
    /// `q_{j,k}`, `k = 0..=N`.
    q: Vec<Vec<DVector<T>>>,
    /// `t_{j,k}`, `k = 0..N`.
    t: Vec<Vec<DVector<T>>>,
}

fn place_input<T: Scalar>(m: &DMatrix<T>, k: usize, n_a: usize, n_u: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(m.nrows(), n_u);
    out.view_mut((0, k * n_a), (m.nrows(), n_a)).copy_from(m);
    out
}

fn propagate<T: Scalar>(theta: &ThetaParams<T>, s: &DVector<T>, dims: &MpcDims) -> Propagation<T> {
    let (n, na, nu) = (dims.horizon, dims.n_a, dims.n_inputs());
    let mut s_mats = vec![DMatrix::zeros(dims.n_s, nu)];
    let mut q = vec![vec![s.clone()]; dims.n_models + 1];
    let mut t = vec![Vec::with_capacity(n); dims.n_models + 1];
    for k in 0..n {
        let next = &theta.a0 * &s_mats[k] + place_input(&theta.b0, k, na, nu);
        s_mats.push(next);
        let q0k = q[0][k].clone();
        for j in 0..=dims.n_models {
            let tjk = -(&theta.k * (&q[j][k] - &q0k));
            let qn =
                &theta.a0 * &q[j][k] + &theta.b0 * &tjk + &theta.bias + theta.scenario_offset(j);
            t[j].push(tjk);
            q[j].push(qn);
        }
    }
    Propagation { s_mats, q, t }
}

/// Directional derivative of [`propagate`] along the parameter tangent `dt`.
fn propagate_tangent<T: Scalar>(
    theta: &ThetaParams<T>,
    dt: &ThetaParams<T>,
    base: &Propagation<T>,
    dims: &MpcDims,
) -> Propagation<T> {
    let (n, na, nu) = (dims.horizon, dims.n_a, dims.n_inputs());
    let mut s_mats = vec![DMatrix::zeros(dims.n_s, nu)];
    let mut q = vec![vec![DVector::zeros(dims.n_s)]; dims.n_models + 1];
    let mut t = vec![Vec::with_capacity(n); dims.n_models + 1];
    for k in 0..n {
        let next =
            &dt.a0 * &base.s_mats[k] + &theta.a0 * &s_mats[k] + place_input(&dt.b0, k, na, nu);
        s_mats.push(next);
        let q0k = q[0][k].clone();
        for j in 0..=dims.n_models {
            let tjk = -(&dt.k * (&base.q[j][k] - &base.q[0][k])) - &theta.k * (&q[j][k] - &q0k);
            let qn = &dt.a0 * &base.q[j][k]
                + &theta.a0 * &q[j][k]
                + &dt.b0 * &base.t[j][k]
                + &theta.b0 * &tjk
                + &dt.bias
                + dt.scenario_offset(j);
            t[j].push(tjk);
            q[j].push(qn);
        }
    }
    Propagation { s_mats, q, t }
}

/// Scenario MPC with the nominal input sequence as the only primal variable.
///
/// Primal vector `u = (u_{0,0}, …, u_{0,N−1})`; one inequality
/// `‖x_{j,k}‖² − 1 ≤ 0` per scenario `j = 0..=N_M` and stage `k = 1..=N`,
/// ordered scenario-major.
#[derive(Debug, Clone)]
pub struct CondensedMpc<T: Scalar> {
    theta: ThetaParams<T>,
    s: DVector<T>,
    dims: MpcDims,
    d: DVector<T>,
    prop: Propagation<T>,
    sts: Vec<DMatrix<T>>,
    hessian: DMatrix<T>,
}

impl<T: Scalar> CondensedMpc<T> {
    pub fn new(theta: &ThetaParams<T>, s: &DVector<T>, dims: MpcDims) -> Result<Self, MpcError> {
        theta.check(&dims)?;
        if s.len() != dims.n_s {
            return Err(MpcError::DimensionMismatch {
                what: "state",
                expected: dims.n_s,
                got: s.len(),
            });
        }
        let prop = propagate(theta, s, &dims);
        let nu = dims.n_inputs();
        let sts: Vec<DMatrix<T>> = prop.s_mats.iter().map(|m| m.tr_mul(m)).collect();
        let mut hessian = DMatrix::identity(nu, nu);
        for m in sts.iter().skip(1) {
            hessian += m;
        }
        let two = T::one() + T::one();
        hessian *= two * crate::scalar::lit::<T>((dims.n_models + 1) as f64);
        Ok(Self {
            theta: theta.clone(),
            s: s.clone(),
            dims,
            d: DVector::zeros(dims.n_a),
            prop,
            sts,
            hessian,
        })
    }

    pub fn theta(&self) -> &ThetaParams<T> {
        &self.theta
    }

    pub fn state(&self) -> &DVector<T> {
        &self.s
    }

    pub fn mpc_dims(&self) -> MpcDims {
        self.dims
    }

    fn idx(&self, j: usize, k: usize) -> usize {
        j * self.dims.horizon + (k - 1)
    }

    fn block(&self, u: &DVector<T>, k: usize) -> DVector<T> {
        u.rows(k * self.dims.n_a, self.dims.n_a).into_owned()
    }

    /// `x_{j,k}` for all scenarios and `k = 0..=N`.
    pub fn states(&self, u: &DVector<T>) -> Vec<Vec<DVector<T>>> {
        self.prop
            .q
            .iter()
            .map(|qj| {
                qj.iter()
                    .zip(&self.prop.s_mats)
                    .map(|(q, s)| s * u + q)
                    .collect()
            })
            .collect()
    }

    /// `u_{j,k}` for all scenarios and `k = 0..N`.
    pub fn inputs(&self, u: &DVector<T>) -> Vec<Vec<DVector<T>>> {
        self.prop
            .t
            .iter()
            .map(|tj| {
                tj.iter()
                    .enumerate()
                    .map(|(k, t)| self.block(u, k) + t)
                    .collect()
            })
            .collect()
    }

    /// Strictly interior `(u, μ = τ/(−h))` found from `guess` (default: `ū`
    /// at every stage).
    pub fn interior_start(
        &self,
        guess: Option<&DVector<T>>,
        tau: T,
    ) -> Result<PrimalDualPoint<T>, MpcError> {
        let anchor = match guess {
            Some(g) => g.clone(),
            None => {
                let mut u = DVector::zeros(self.dims.n_inputs());
                for k in 0..self.dims.horizon {
                    u.rows_mut(k * self.dims.n_a, self.dims.n_a)
                        .copy_from(&self.theta.u_bar);
                }
                u
            }
        };
        let y = find_interior_point(self, &anchor, &SolverConfig::default())?;
        let h = self.ineq_values(&y);
        Ok(PrimalDualPoint::centered(y, &h, 0, tau))
    }
}

impl<T: Scalar> NlpBase<T> for CondensedMpc<T> {
    fn dims(&self) -> NlpDims {
        NlpDims::new(self.dims.n_inputs(), 0, self.dims.n_state_constraints())
    }

    fn ineq_values(&self, u: &DVector<T>) -> DVector<T> {
        let mut h = DVector::zeros(self.dims.n_state_constraints());
        for (j, qj) in self.prop.q.iter().enumerate() {
            for k in 1..=self.dims.horizon {
                let x = &self.prop.s_mats[k] * u + &qj[k];
                h[self.idx(j, k)] = x.norm_squared() - T::one();
            }
        }
        h
    }

    fn initial_point(&self, tau: T) -> Option<PrimalDualPoint<T>> {
        self.interior_start(None, tau).ok()
    }
}

crate::dense_nlp_problem!([T: Scalar] CondensedMpc<T>);

impl<T: Scalar> QuadraticNlp<T> for CondensedMpc<T> {
    fn cost_gradient(&self, u: &DVector<T>) -> DVector<T> {
        let two = T::one() + T::one();
        let na = self.dims.n_a;
        let mut g = DVector::zeros(self.dims.n_inputs());
        for j in 0..=self.dims.n_models {
            for k in 1..=self.dims.horizon {
                let s = &self.prop.s_mats[k];
                let x = s * u + &self.prop.q[j][k];
                g += s.tr_mul(&(x - &self.theta.x_bar)) * two;
            }
            for k in 0..self.dims.horizon {
                let uj = self.block(u, k) + &self.prop.t[j][k];
                let mut blk = g.rows_mut(k * na, na);
                blk += (uj - &self.theta.u_bar) * two;
            }
        }
        let mut first = g.rows_mut(0, na);
        first += &self.d;
        g
    }

    fn cost_hessian(&self) -> DMatrix<T> {
        self.hessian.clone()
    }

    fn eq_values(&self, _u: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn eq_jacobian(&self, _u: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(0, self.dims.n_inputs())
    }

    fn eq_hessian_contraction(&self, _w: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.dims.n_inputs(), self.dims.n_inputs())
    }

    fn eq_curvature(&self, _a: &DVector<T>, _b: &DVector<T>) -> DVector<T> {
        DVector::zeros(0)
    }

    fn ineq_jacobian(&self, u: &DVector<T>) -> DMatrix<T> {
        let two = T::one() + T::one();
        let mut jac = DMatrix::zeros(self.dims.n_state_constraints(), self.dims.n_inputs());
        for (j, qj) in self.prop.q.iter().enumerate() {
            for k in 1..=self.dims.horizon {
                let s = &self.prop.s_mats[k];
                let x = s * u + &qj[k];
                let row = s.tr_mul(&x) * two;
                jac.set_row(self.idx(j, k), &row.transpose());
            }
        }
        jac
    }

    fn ineq_hessian_contraction(&self, w: &DVector<T>) -> DMatrix<T> {
        let two = T::one() + T::one();
        let nu = self.dims.n_inputs();
        let mut h = DMatrix::zeros(nu, nu);
        for k in 1..=self.dims.horizon {
            let weight = (0..=self.dims.n_models).fold(T::zero(), |acc, j| acc + w[self.idx(j, k)]);
            h += &self.sts[k] * (weight * two);
        }
        h
    }

    fn ineq_curvature(&self, a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        let two = T::one() + T::one();
        let mut out = DVector::zeros(self.dims.n_state_constraints());
        for k in 1..=self.dims.horizon {
            let s = &self.prop.s_mats[k];
            let v = (s * a).dot(&(s * b)) * two;
            for j in 0..=self.dims.n_models {
                out[self.idx(j, k)] = v;
            }
        }
        out
    }
}

impl<T: Scalar> ParametricNlp<T> for CondensedMpc<T> {
    fn n_theta(&self) -> usize {
        self.dims.layout().len()
    }

    fn n_d(&self) -> usize {
        self.dims.n_a
    }

    fn cost_disturbance_jacobian(&self) -> DMatrix<T> {
        let mut g = DMatrix::zeros(self.dims.n_inputs(), self.dims.n_a);
        g.view_mut((0, 0), (self.dims.n_a, self.dims.n_a))
            .fill_with_identity();
        g
    }

    fn residual_theta_jacobian(&self, z: &PrimalDualPoint<T>) -> DMatrix<T> {
        let two = T::one() + T::one();
        let layout = self.dims.layout();
        let (nu, na) = (self.dims.n_inputs(), self.dims.n_a);
        let ni = self.dims.n_state_constraints();
        let u = &z.y;
        let states = self.states(u);
        let mut out = DMatrix::zeros(nu + ni, layout.len());
        for p in 0..layout.len() {
            let mut e = DVector::zeros(layout.len());
            e[p] = T::one();
            let dt = ThetaParams::unflatten(&e, layout).expect("layout length");
            let tan = propagate_tangent(&self.theta, &dt, &self.prop, &self.dims);
            let mut stat = DVector::zeros(nu);
            let mut comp = DVector::zeros(ni);
            for j in 0..=self.dims.n_models {
                for k in 1..=self.dims.horizon {
                    let s = &self.prop.s_mats[k];
                    let ds = &tan.s_mats[k];
                    let x = &states[j][k];
                    let dx = ds * u + &tan.q[j][k];
                    let mu = z.mu[self.idx(j, k)];
                    let xd = x - &self.theta.x_bar;
                    let dxd = &dx - &dt.x_bar;
                    stat += (ds.tr_mul(&xd) + s.tr_mul(&dxd)) * two;
                    stat += (ds.tr_mul(x) + s.tr_mul(&dx)) * (two * mu);
                    comp[self.idx(j, k)] = two * mu * x.dot(&dx);
                }
                for k in 0..self.dims.horizon {
                    let du = &tan.t[j][k] - &dt.u_bar;
                    let mut blk = stat.rows_mut(k * na, na);
                    blk += du * two;
                }
            }
            out.view_mut((0, p), (nu, 1)).copy_from(&stat);
            out.view_mut((nu, p), (ni, 1)).copy_from(&comp);
        }
        out
    }

    fn with_disturbance(&self, d: &DVector<T>) -> Self {
        let mut c = self.clone();
        c.d = d.clone();
        c
    }
}
