//! Robust multi-model linear MPC and the geometry of its disturbance polytope.
//!
//! Scenario `j = 0` is the nominal model, scenarios `1..=N_M` add the polytope
//! vertices `W^j` as constant offsets. Every scenario shares the first input,
//! and later inputs follow the ancillary law `u_{j,k} = u_{0,k} − K(x_{j,k} − x_{0,k})`.

mod condensed;
mod lqr;
mod membership;
mod sparse;

pub use condensed::CondensedMpc;
pub use lqr::{dlqr, riccati_residual, LqrSolution};
pub use membership::{
    hull_containment_check, hull_gauge, membership_residual, polytope_membership, HullReport,
    Membership,
};
pub use sparse::{build_mpc_nlp, ScenarioMpc};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::nlp::NlpError;
use crate::scalar::{to_f64, Scalar};

#[derive(Debug, Clone, Error)]
pub enum MpcError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("B0 is rank deficient (smallest singular value {smallest:e})")]
    RankDeficient { smallest: f64 },
    #[error(
        "Riccati iteration did not converge after {iterations} iterations (change {change:e})"
    )]
    RiccatiDiverged { iterations: usize, change: f64 },
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

/// Horizon, scenario count and state/input sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpcDims {
    pub horizon: usize,
    pub n_models: usize,
    pub n_s: usize,
    pub n_a: usize,
}

impl Default for MpcDims {
    fn default() -> Self {
        Self {
            horizon: 10,
            n_models: 4,
            n_s: 2,
            n_a: 2,
        }
    }
}

impl MpcDims {
    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            n_s: self.n_s,
            n_a: self.n_a,
            n_models: self.n_models,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.horizon * self.n_a
    }

    /// One state constraint per scenario (nominal included) and stage `1..=N`.
    pub fn n_state_constraints(&self) -> usize {
        (self.n_models + 1) * self.horizon
    }
}

/// Vertices `W^1..W^{N_M}` of the disturbance polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeW<T: Scalar> {
    pub vertices: Vec<DVector<T>>,
}

impl<T: Scalar> PolytopeW<T> {
    /// Axis-aligned square `half_width·{(−1,−1), (1,−1), (1,1), (−1,1)}`.
    pub fn square(half_width: T) -> Self {
        let signs = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        Self {
            vertices: signs
                .iter()
                .map(|&(a, b)| {
                    DVector::from_vec(vec![
                        half_width * crate::scalar::lit::<T>(a),
                        half_width * crate::scalar::lit::<T>(b),
                    ])
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Positions of each parameter block in the flat θ vector.
///
/// Order: `x̄`, `ū`, `A0`, `B0`, `b0`, `K`, `W¹..W^{N_M}`; matrices row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub n_s: usize,
    pub n_a: usize,
    pub n_models: usize,
}

impl ThetaLayout {
    pub fn x_bar(&self, i: usize) -> usize {
        i
    }

    pub fn u_bar(&self, i: usize) -> usize {
        self.n_s + i
    }

    pub fn a0(&self, r: usize, c: usize) -> usize {
        self.n_s + self.n_a + r * self.n_s + c
    }

    pub fn b0(&self, r: usize, c: usize) -> usize {
        self.a0(0, 0) + self.n_s * self.n_s + r * self.n_a + c
    }

    pub fn bias(&self, i: usize) -> usize {
        self.b0(0, 0) + self.n_s * self.n_a + i
    }

    pub fn k(&self, r: usize, c: usize) -> usize {
        self.bias(0) + self.n_s + r * self.n_s + c
    }

    pub fn w(&self, vertex: usize, i: usize) -> usize {
        self.k(0, 0) + self.n_a * self.n_s + vertex * self.n_s + i
    }

    pub fn len(&self) -> usize {
        self.w(0, 0) + self.n_models * self.n_s
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column labels matching the flat ordering.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        out.extend((0..self.n_s).map(|i| format!("x_bar_{i}")));
        out.extend((0..self.n_a).map(|i| format!("u_bar_{i}")));
        for r in 0..self.n_s {
            out.extend((0..self.n_s).map(|c| format!("A0_{r}{c}")));
        }
        for r in 0..self.n_s {
            out.extend((0..self.n_a).map(|c| format!("B0_{r}{c}")));
        }
        out.extend((0..self.n_s).map(|i| format!("b0_{i}")));
        for r in 0..self.n_a {
            out.extend((0..self.n_s).map(|c| format!("K_{r}{c}")));
        }
        for v in 0..self.n_models {
            out.extend((0..self.n_s).map(|i| format!("W{}_{i}", v + 1)));
        }
        out
    }
}

/// Learnable MPC parameters θ = {x̄, ū, A0, B0, b0, K, W}.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams<T: Scalar> {
    pub x_bar: DVector<T>,
    pub u_bar: DVector<T>,
    pub a0: DMatrix<T>,
    pub b0: DMatrix<T>,
    /// Affine offset `b0` of the nominal model.
    pub bias: DVector<T>,
    pub k: DMatrix<T>,
    pub w: PolytopeW<T>,
}

impl<T: Scalar> ThetaParams<T> {
    pub fn n_s(&self) -> usize {
        self.x_bar.len()
    }

    pub fn n_a(&self) -> usize {
        self.u_bar.len()
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            n_s: self.n_s(),
            n_a: self.n_a(),
            n_models: self.w.len(),
        }
    }

    pub fn check(&self, dims: &MpcDims) -> Result<(), MpcError> {
        let (ns, na) = (dims.n_s, dims.n_a);
        let checks = [
            ("x_bar", ns, self.x_bar.len()),
            ("u_bar", na, self.u_bar.len()),
            ("A0 rows", ns, self.a0.nrows()),
            ("A0 cols", ns, self.a0.ncols()),
            ("B0 rows", ns, self.b0.nrows()),
            ("B0 cols", na, self.b0.ncols()),
            ("b0", ns, self.bias.len()),
            ("K rows", na, self.k.nrows()),
            ("K cols", ns, self.k.ncols()),
            ("W vertex count", dims.n_models, self.w.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(MpcError::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        for v in &self.w.vertices {
            if v.len() != ns {
                return Err(MpcError::DimensionMismatch {
                    what: "W vertex",
                    expected: ns,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// `F0(s, a) = A0 s + B0 a + b0`.
    pub fn nominal_step(&self, s: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.a0 * s + &self.b0 * a + &self.bias
    }

    pub fn flatten(&self) -> DVector<T> {
        let l = self.layout();
        let mut v = DVector::zeros(l.len());
        let (ns, na) = (l.n_s, l.n_a);
        for i in 0..ns {
            v[l.x_bar(i)] = self.x_bar[i];
            v[l.bias(i)] = self.bias[i];
            for c in 0..ns {
                v[l.a0(i, c)] = self.a0[(i, c)];
            }
            for c in 0..na {
                v[l.b0(i, c)] = self.b0[(i, c)];
            }
        }
        for i in 0..na {
            v[l.u_bar(i)] = self.u_bar[i];
            for c in 0..ns {
                v[l.k(i, c)] = self.k[(i, c)];
            }
        }
        for (j, w) in self.w.vertices.iter().enumerate() {
            for i in 0..ns {
                v[l.w(j, i)] = w[i];
            }
        }
        v
    }

    pub fn unflatten(v: &DVector<T>, layout: ThetaLayout) -> Result<Self, MpcError> {
        if v.len() != layout.len() {
            return Err(MpcError::DimensionMismatch {
                what: "flat theta",
                expected: layout.len(),
                got: v.len(),
            });
        }
        let l = layout;
        let (ns, na) = (l.n_s, l.n_a);
        Ok(Self {
            x_bar: DVector::from_fn(ns, |i, _| v[l.x_bar(i)]),
            u_bar: DVector::from_fn(na, |i, _| v[l.u_bar(i)]),
            a0: DMatrix::from_fn(ns, ns, |r, c| v[l.a0(r, c)]),
            b0: DMatrix::from_fn(ns, na, |r, c| v[l.b0(r, c)]),
            bias: DVector::from_fn(ns, |i, _| v[l.bias(i)]),
            k: DMatrix::from_fn(na, ns, |r, c| v[l.k(r, c)]),
            w: PolytopeW {
                vertices: (0..l.n_models)
                    .map(|j| DVector::from_fn(ns, |i, _| v[l.w(j, i)]))
                    .collect(),
            },
        })
    }

    /// Scenario offset `W^j`, with `W^0 = 0`.
    pub fn scenario_offset(&self, j: usize) -> DVector<T> {
        if j == 0 {
            DVector::zeros(self.n_s())
        } else {
            self.w.vertices[j - 1].clone()
        }
    }

    pub fn cast_f64(&self) -> ThetaParams<f64> {
        let f = |x: &T| to_f64(*x);
        ThetaParams {
            x_bar: self.x_bar.map(|x| f(&x)),
            u_bar: self.u_bar.map(|x| f(&x)),
            a0: self.a0.map(|x| f(&x)),
            b0: self.b0.map(|x| f(&x)),
            bias: self.bias.map(|x| f(&x)),
            k: self.k.map(|x| f(&x)),
            w: PolytopeW {
                vertices: self.w.vertices.iter().map(|v| v.map(|x| f(&x))).collect(),
            },
        }
    }
}

/// Least-squares solution of `B0 ū = (I − A0) x̄ − b0`.
pub fn steady_state_input<T: Scalar>(theta: &ThetaParams<T>) -> Result<DVector<T>, MpcError> {
    let ns = theta.n_s();
    let rhs = (DMatrix::identity(ns, ns) - &theta.a0) * &theta.x_bar - &theta.bias;
    let svd = theta.b0.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank_tol = smax * T::eps() * crate::scalar::lit::<T>(ns.max(theta.n_a()) as f64);
    if theta.b0.ncols() > theta.b0.nrows() || smax == T::zero() || smin <= rank_tol {
        return Err(MpcError::RankDeficient {
            smallest: to_f64(smin),
        });
    }
    Ok(svd.solve(&rhs, rank_tol).expect("u and v computed"))
}

/// Rotation-like matrix `[[cos β, sin β], [sin β, cos β]]` used by the example models.
pub fn symmetric_rotation<T: Scalar>(beta: T) -> DMatrix<T> {
    let (s, c) = (beta.sin(), beta.cos());
    DMatrix::from_row_slice(2, 2, &[c, s, s, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_theta() -> ThetaParams<f64> {
        ThetaParams {
            x_bar: DVector::from_vec(vec![0.1, 0.2]),
            u_bar: DVector::from_vec(vec![0.3, 0.4]),
            a0: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            b0: DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]),
            bias: DVector::from_vec(vec![9.0, 10.0]),
            k: DMatrix::from_row_slice(2, 2, &[11.0, 12.0, 13.0, 14.0]),
            w: PolytopeW::square(0.1),
        }
    }

    #[test]
    fn flat_ordering_is_documented_order() {
        let t = sample_theta();
        let v = t.flatten();
        assert_eq!(v.len(), 26);
        let head: Vec<f64> = v.iter().take(18).copied().collect();
        assert_eq!(
            head,
            vec![
                0.1, 0.2, 0.3, 0.4, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0,
                13.0, 14.0
            ]
        );
        assert_eq!(v[18], -0.1);
        assert_eq!(v[25], 0.1);
        let back = ThetaParams::unflatten(&v, t.layout()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.layout().names().len(), 26);
    }

    #[test]
    fn steady_state_examples() {
        let mut t = sample_theta();
        t.x_bar = DVector::zeros(2);
        t.bias = DVector::zeros(2);
        t.b0 = DMatrix::identity(2, 2);
        assert_eq!(steady_state_input(&t).unwrap(), DVector::zeros(2));

        t.a0 = symmetric_rotation(20f64.to_radians());
        t.x_bar = DVector::from_vec(vec![1.0, 0.0]);
        let expected = (DMatrix::identity(2, 2) - &t.a0) * &t.x_bar;
        assert!((steady_state_input(&t).unwrap() - expected).amax() < 1e-14);

        t.b0 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            steady_state_input(&t),
            Err(MpcError::RankDeficient { .. })
        ));
    }

    #[test]
    fn dimension_check_reports_block() {
        let t = sample_theta();
        let dims = MpcDims {
            n_models: 3,
            ..MpcDims::default()
        };
        assert!(matches!(
            t.check(&dims),
            Err(MpcError::DimensionMismatch {
                what: "W vertex count",
                ..
            })
        ));
    }
}
