use nalgebra::{DMatrix, DVector};

use crate::mpc::{hull_gauge, ThetaLayout, ThetaParams};
use crate::nlp::{
    BorderedBlocks, KktSolve, LocalBlock, NlpBase, NlpDims, NlpError, NlpProblem, PrimalDualPoint,
};
use crate::scalar::{lit, to_f64, Scalar};

/// One observed transition `(s, a, s⁺)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint<T: Scalar> {
    pub s: DVector<T>,
    pub a: DVector<T>,
    pub s_plus: DVector<T>,
}

/// `min ½‖θ − θ₋‖² + α gᵀ(θ − θ₋)` over the free entries of θ and the convex
/// weights `ϑ_k`, subject to `s⁺_k − F0(s_k, a_k, θ) = Σᵢ ϑᵢₖ Wⁱ`, `Σᵢ ϑᵢₖ = 1`,
/// `ϑ ≥ 0` for every data point.
///
/// Primal layout: free θ entries, then `ϑ_k` per point. Equalities per point:
/// the `n_s` membership rows, then the simplex row. Inequalities `−ϑ ≤ 0`.
pub struct SafeUpdateProblem<'a, T: Scalar> {
    theta_minus: DVector<T>,
    /// `α g`, full length.
    step: DVector<T>,
    layout: ThetaLayout,
    free: Vec<usize>,
    /// Position among the free entries, per full index.
    free_pos: Vec<Option<usize>>,
    data: &'a [DataPoint<T>],
}

impl<'a, T: Scalar> SafeUpdateProblem<'a, T> {
    pub fn new(
        theta_minus: &ThetaParams<T>,
        scaled_gradient: &DVector<T>,
        free: Vec<usize>,
        data: &'a [DataPoint<T>],
    ) -> Self {
        let layout = theta_minus.layout();
        let mut free_pos = vec![None; layout.len()];
        for (p, &i) in free.iter().enumerate() {
            free_pos[i] = Some(p);
        }
        Self {
            theta_minus: theta_minus.flatten(),
            step: scaled_gradient.clone(),
            layout,
            free,
            free_pos,
            data,
        }
    }

    fn n_m(&self) -> usize {
        self.layout.n_models
    }

    fn n_s(&self) -> usize {
        self.layout.n_s
    }

    fn block_len(&self) -> usize {
        2 * self.n_m() + self.n_s() + 1
    }

    fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn full_theta(&self, y: &DVector<T>) -> DVector<T> {
        let mut th = self.theta_minus.clone();
        for (p, &i) in self.free.iter().enumerate() {
            th[i] = y[p];
        }
        th
    }

    pub fn theta_params(&self, y: &DVector<T>) -> ThetaParams<T> {
        ThetaParams::unflatten(&self.full_theta(y), self.layout).expect("layout length")
    }

    fn vartheta_offset(&self, k: usize) -> usize {
        self.n_free() + k * self.n_m()
    }

    /// Positions of `(ϑ_k, λ_k, μ_k)` in `z`.
    fn local_indices(&self, k: usize) -> Vec<usize> {
        let d = self.dims();
        let (m, ns) = (self.n_m(), self.n_s());
        let mut idx = Vec::with_capacity(self.block_len());
        idx.extend(self.vartheta_offset(k)..self.vartheta_offset(k) + m);
        let l0 = d.n_y + k * (ns + 1);
        idx.extend(l0..l0 + ns + 1);
        let m0 = d.n_y + d.n_eq + k * m;
        idx.extend(m0..m0 + m);
        idx
    }

    /// `∂e_k/∂θ` over the full θ, `e_k = s⁺ − F0(s, a) − Σ ϑᵢ Wⁱ`.
    fn membership_jacobian(&self, k: usize, vartheta: &[T]) -> DMatrix<T> {
        let (l, ns) = (self.layout, self.n_s());
        let pt = &self.data[k];
        let mut j = DMatrix::zeros(ns, l.len());
        for r in 0..ns {
            for c in 0..ns {
                j[(r, l.a0(r, c))] = -pt.s[c];
            }
            for c in 0..l.n_a {
                j[(r, l.b0(r, c))] = -pt.a[c];
            }
            j[(r, l.bias(r))] = -T::one();
            for (i, &v) in vartheta.iter().enumerate() {
                j[(r, l.w(i, r))] = -v;
            }
        }
        j
    }

    fn select_free_cols(&self, m: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(m.nrows(), self.n_free(), |r, c| m[(r, self.free[c])])
    }

    /// Start `θ = θ₋`, `ϑ = 1/N_M`, `λ = 0`, `μ = τ/ϑ`. Interior but in general
    /// not feasible for the equalities.
    pub fn start(&self, tau: T) -> PrimalDualPoint<T> {
        let d = self.dims();
        let share = T::one() / T::from_usize(self.n_m()).expect("vertex count");
        let mut y = DVector::from_element(d.n_y, share);
        for (p, &i) in self.free.iter().enumerate() {
            y[p] = self.theta_minus[i];
        }
        self.with_duals(y, tau)
    }

    /// Feasible interior start: `θ = θ₋` except for `W`, which is scaled about
    /// its vertex mean just enough to hold every residual strictly inside, and
    /// each `ϑ_k > 0` reproduces its residual exactly. `None` when `W` is not
    /// free or a residual cannot be expressed.
    pub fn feasible_start(&self, tau: T) -> Option<PrimalDualPoint<T>> {
        self.interior_weights().map(|y| self.with_duals(y, tau))
    }

    fn with_duals(&self, y: DVector<T>, tau: T) -> PrimalDualPoint<T> {
        let d = self.dims();
        let mu = DVector::from_fn(d.n_in, |p, _| tau / y[self.n_free() + p]);
        PrimalDualPoint::new(y, DVector::zeros(d.n_eq), mu, tau)
    }

    /// Primal part of the scaled-`W` start, or `None`.
    fn interior_weights(&self) -> Option<DVector<T>> {
        const MARGIN: f64 = 0.95;
        let (m, ns) = (self.n_m(), self.n_s());
        let w_free = (0..m).all(|i| (0..ns).all(|r| self.free_pos[self.layout.w(i, r)].is_some()));
        if !w_free || self.data.is_empty() {
            return None;
        }
        let params = ThetaParams::unflatten(&self.theta_minus, self.layout).ok()?;
        let verts: Vec<DVector<f64>> = params.w.vertices.iter().map(|v| v.map(to_f64)).collect();
        let mut gauges = Vec::with_capacity(self.data.len());
        for pt in self.data {
            let r = (&pt.s_plus - params.nominal_step(&pt.s, &pt.a)).map(to_f64);
            gauges.push(hull_gauge(&verts, &r)?);
        }
        let rho_max = gauges.iter().map(|(rho, _)| *rho).fold(0.0, f64::max);
        let scale = (rho_max / MARGIN).max(1.0);
        if !scale.is_finite() {
            return None;
        }
        let centre = verts.iter().fold(DVector::zeros(ns), |acc, v| acc + v) / m as f64;
        let mut y = DVector::zeros(self.dims().n_y);
        for (p, &i) in self.free.iter().enumerate() {
            y[p] = self.theta_minus[i];
        }
        for (i, v) in verts.iter().enumerate() {
            for r in 0..ns {
                let p = self.free_pos[self.layout.w(i, r)]?;
                y[p] = lit(centre[r] + scale * (v[r] - centre[r]));
            }
        }
        for (k, (rho, beta)) in gauges.iter().enumerate() {
            let off = self.vartheta_offset(k);
            let base = (1.0 - rho / scale) / m as f64;
            for (i, b) in beta.iter().enumerate() {
                y[off + i] = lit(b / scale + base);
            }
        }
        Some(y)
    }

    pub fn vartheta<'z>(&self, z: &'z PrimalDualPoint<T>, k: usize) -> &'z [T] {
        let off = self.vartheta_offset(k);
        &z.y.as_slice()[off..off + self.n_m()]
    }
}

impl<T: Scalar> NlpBase<T> for SafeUpdateProblem<'_, T> {
    fn dims(&self) -> NlpDims {
        let k = self.data.len();
        let m = self.n_m();
        NlpDims::new(self.n_free() + k * m, k * (self.n_s() + 1), k * m)
    }

    fn ineq_values(&self, y: &DVector<T>) -> DVector<T> {
        -y.rows(self.n_free(), y.len() - self.n_free()).into_owned()
    }

    fn initial_point(&self, tau: T) -> Option<PrimalDualPoint<T>> {
        Some(self.start(tau))
    }
}

impl<T: Scalar> NlpProblem<T> for SafeUpdateProblem<'_, T> {
    fn residual(&self, z: &PrimalDualPoint<T>) -> DVector<T> {
        let d = self.dims();
        let (m, ns) = (self.n_m(), self.n_s());
        let theta = self.full_theta(&z.y);
        let params = ThetaParams::unflatten(&theta, self.layout).expect("layout length");
        let mut stat_full = &theta - &self.theta_minus + &self.step;
        let mut r = DVector::zeros(d.n_z());
        for (k, pt) in self.data.iter().enumerate() {
            let vt = self.vartheta(z, k);
            let lam = z.lambda.rows(k * (ns + 1), ns);
            let lam_sum = z.lambda[k * (ns + 1) + ns];
            let mut e = &pt.s_plus - params.nominal_step(&pt.s, &pt.a);
            for (i, &v) in vt.iter().enumerate() {
                e -= &params.w.vertices[i] * v;
            }
            stat_full += self.membership_jacobian(k, vt).tr_mul(&lam);
            let off = self.vartheta_offset(k);
            for i in 0..m {
                let mu = z.mu[k * m + i];
                r[off + i] = lam_sum - params.w.vertices[i].dot(&lam) - mu;
                r[d.n_y + d.n_eq + k * m + i] = -mu * vt[i] + z.tau;
            }
            r.rows_mut(d.n_y + k * (ns + 1), ns).copy_from(&e);
            r[d.n_y + k * (ns + 1) + ns] = vt.iter().fold(-T::one(), |acc, &v| acc + v);
        }
        for (p, &i) in self.free.iter().enumerate() {
            r[p] = stat_full[i];
        }
        r
    }

    fn factor_kkt(
        &self,
        z: &PrimalDualPoint<T>,
        regularization: T,
    ) -> Result<Box<dyn KktSolve<T>>, NlpError> {
        let d = self.dims();
        let (m, ns, nf) = (self.n_m(), self.n_s(), self.n_free());
        let nb = self.block_len();
        let params = self.theta_params(&z.y);
        let (lam_col, sum_col, mu_col) = (m, m + ns, m + ns + 1);
        let mut blocks = Vec::with_capacity(self.data.len());
        for k in 0..self.data.len() {
            let vt = self.vartheta(z, k);
            let lam = z.lambda.rows(k * (ns + 1), ns).into_owned();
            let mut a_kk = DMatrix::zeros(nb, nb);
            for i in 0..m {
                a_kk[(i, i)] = regularization;
                for r in 0..ns {
                    let w = params.w.vertices[i][r];
                    a_kk[(i, lam_col + r)] = -w;
                    a_kk[(lam_col + r, i)] = -w;
                }
                a_kk[(i, sum_col)] = T::one();
                a_kk[(sum_col, i)] = T::one();
                a_kk[(i, mu_col + i)] = -T::one();
                a_kk[(mu_col + i, i)] = -z.mu[k * m + i];
                a_kk[(mu_col + i, mu_col + i)] = -vt[i];
            }
            for r in 0..=ns {
                a_kk[(lam_col + r, lam_col + r)] = -regularization;
            }

            let jac = self.select_free_cols(&self.membership_jacobian(k, vt));
            // ∂²(λᵀe)/∂Wⁱ_r∂ϑᵢ = −λ_r
            let mut cross = DMatrix::zeros(nf, m);
            for i in 0..m {
                for r in 0..ns {
                    if let Some(p) = self.free_pos[self.layout.w(i, r)] {
                        cross[(p, i)] = -lam[r];
                    }
                }
            }
            let mut a_gk = DMatrix::zeros(nf, nb);
            a_gk.view_mut((0, 0), (nf, m)).copy_from(&cross);
            a_gk.view_mut((0, lam_col), (nf, ns))
                .copy_from(&jac.transpose());
            let mut a_kg = DMatrix::zeros(nb, nf);
            a_kg.view_mut((0, 0), (m, nf)).copy_from(&cross.transpose());
            a_kg.view_mut((lam_col, 0), (ns, nf)).copy_from(&jac);
            blocks.push(LocalBlock {
                indices: self.local_indices(k),
                a_kk,
                a_gk,
                a_kg,
            });
        }
        let a_gg = DMatrix::identity(nf, nf) * (T::one() + regularization);
        let bordered = BorderedBlocks {
            dim: d.n_z(),
            global: (0..nf).collect(),
            a_gg,
            blocks,
        };
        Ok(Box::new(bordered.factor("safe update KKT Jacobian")?))
    }
}
