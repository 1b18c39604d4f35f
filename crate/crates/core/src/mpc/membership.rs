use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use super::ThetaParams;
use crate::scalar::{to_f64, Scalar};

const FEASIBILITY_TOL: f64 = 1e-8;
const MAX_ENUMERATED_VERTICES: usize = 12;

/// Outcome of a convex-combination test.
#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    /// Weights `ϑ ≥ 0`, `Σϑ = 1` reproducing the point; `violation` is the
    /// LP's minimal ∞-norm mismatch (≤ 1e-8).
    Feasible { weights: Vec<f64>, violation: f64 },
    /// Minimal ∞-norm mismatch over all convex combinations.
    Infeasible { violation: f64 },
}

impl Membership {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Membership::Feasible { .. })
    }

    pub fn violation(&self) -> f64 {
        match self {
            Membership::Feasible { violation, .. } | Membership::Infeasible { violation } => {
                *violation
            }
        }
    }
}

/// `min t  s.t.  |Σϑᵢvᵢ − p|_∞ ≤ t, Σϑ = 1, ϑ ≥ 0`.
fn min_violation(vertices: &[DVector<f64>], point: &DVector<f64>) -> (f64, Vec<f64>) {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let weights: Vec<_> = vertices
        .iter()
        .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let ones: Vec<_> = weights.iter().map(|&w| (w, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
    for r in 0..point.len() {
        let mut upper: Vec<_> = weights
            .iter()
            .zip(vertices)
            .map(|(&w, v)| (w, v[r]))
            .collect();
        let mut lower = upper.clone();
        upper.push((t, -1.0));
        lower.push((t, 1.0));
        lp.add_constraint(upper.as_slice(), ComparisonOp::Le, point[r]);
        lp.add_constraint(lower.as_slice(), ComparisonOp::Ge, point[r]);
    }
    let sol = lp
        .solve()
        .expect("bounded and feasible by construction (t large enough)");
    let w = weights.iter().map(|&v| sol[v].max(0.0)).collect();
    (sol[t], w)
}

/// Convex weights closest to uniform, by enumerating supports.
fn central_weights(vertices: &[DVector<f64>], point: &DVector<f64>, tol: f64) -> Option<Vec<f64>> {
    let m = vertices.len();
    let n = point.len();
    let c = 1.0 / m as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << m) {
        let support: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let a = DMatrix::from_fn(n + 1, support.len(), |r, col| {
            if r < n {
                vertices[support[col]][r]
            } else {
                1.0
            }
        });
        let mut b = DVector::from_element(n + 1, 1.0);
        b.rows_mut(0, n).copy_from(point);
        let cs = DVector::from_element(support.len(), c);
        let gap = &b - &a * &cs;
        let aat = &a * a.transpose();
        let Ok(pinv) = aat.pseudo_inverse(1e-12) else {
            continue;
        };
        let theta = &cs + a.transpose() * (pinv * gap);
        if (&a * &theta - &b).amax() > tol || theta.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let obj = (&theta - &cs).norm_squared() + c * c * (m - support.len()) as f64;
        if best.as_ref().is_none_or(|(o, _)| obj < *o - 1e-15) {
            let mut w = vec![0.0; m];
            for (&i, &v) in support.iter().zip(theta.iter()) {
                w[i] = v.max(0.0);
            }
            best = Some((obj, w));
        }
    }
    best.map(|(_, w)| w)
}

/// Tests whether `point` lies in the convex hull of `vertices`.
pub fn polytope_membership(vertices: &[DVector<f64>], point: &DVector<f64>) -> Membership {
    let (violation, lp_weights) = min_violation(vertices, point);
    if violation > FEASIBILITY_TOL {
        return Membership::Infeasible { violation };
    }
    let weights = if vertices.len() <= MAX_ENUMERATED_VERTICES {
        central_weights(vertices, point, FEASIBILITY_TOL.max(2.0 * violation)).unwrap_or(lp_weights)
    } else {
        lp_weights
    };
    Membership::Feasible { weights, violation }
}

/// Smallest `ρ` with `point ∈ c + ρ (Conv(vertices) − c)`, `c` the vertex
/// mean, together with `β ≥ 0`, `Σβ = ρ`, `point − c = Σ βᵢ (vᵢ − c)`.
/// `None` if the vertices do not span a full-dimensional polytope around `c`.
pub fn hull_gauge(vertices: &[DVector<f64>], point: &DVector<f64>) -> Option<(f64, Vec<f64>)> {
    let c = vertices
        .iter()
        .fold(DVector::zeros(point.len()), |acc, v| acc + v)
        / vertices.len() as f64;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let beta: Vec<_> = vertices
        .iter()
        .map(|_| lp.add_var(1.0, (0.0, f64::INFINITY)))
        .collect();
    for r in 0..point.len() {
        let row: Vec<_> = beta
            .iter()
            .zip(vertices)
            .map(|(&b, v)| (b, v[r] - c[r]))
            .collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, point[r] - c[r]);
    }
    let sol = lp.solve().ok()?;
    let b: Vec<f64> = beta.iter().map(|&v| sol[v].max(0.0)).collect();
    Some((b.iter().sum(), b))
}

/// Is `s⁺ − F0(s, a)` a convex combination of the vertices of `W`?
pub fn membership_residual<T: Scalar>(
    theta: &ThetaParams<T>,
    s: &DVector<T>,
    a: &DVector<T>,
    s_plus: &DVector<T>,
) -> Membership {
    let r = (s_plus - theta.nominal_step(s, a)).map(to_f64);
    let verts: Vec<_> = theta.w.vertices.iter().map(|v| v.map(to_f64)).collect();
    polytope_membership(&verts, &r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullReport {
    pub sequences: usize,
    pub checks: usize,
    pub violations: usize,
    pub max_violation: f64,
}

/// Simulates the nominal model under the ancillary feedback for each noise
/// sequence and checks `x_k ∈ Conv(x_{1,k}, …, x_{N_M,k})` for `k = 1..=N`.
///
/// `states[j][k]` are the scenario states of a solved MPC (scenario 0 is the
/// nominal one) and `nominal_inputs[k] = u_{0,k}`.
pub fn hull_containment_check<T: Scalar>(
    theta: &ThetaParams<T>,
    states: &[Vec<DVector<T>>],
    nominal_inputs: &[DVector<T>],
    noise: &[Vec<DVector<T>>],
) -> HullReport {
    let horizon = nominal_inputs.len();
    let hulls: Vec<Vec<DVector<f64>>> = (1..=horizon)
        .map(|k| states.iter().skip(1).map(|xj| xj[k].map(to_f64)).collect())
        .collect();
    let mut report = HullReport {
        sequences: noise.len(),
        checks: 0,
        violations: 0,
        max_violation: 0.0,
    };
    for seq in noise {
        let mut x = states[0][0].clone();
        for k in 0..horizon.min(seq.len()) {
            let u = &nominal_inputs[k] - &theta.k * (&x - &states[0][k]);
            x = theta.nominal_step(&x, &u) + &seq[k];
            let m = polytope_membership(&hulls[k], &x.map(to_f64));
            report.checks += 1;
            report.max_violation = report.max_violation.max(m.violation());
            if !m.is_feasible() {
                report.violations += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::PolytopeW;

    fn square() -> Vec<DVector<f64>> {
        PolytopeW::square(0.1).vertices
    }

    #[test]
    fn centroid_gets_uniform_weights() {
        let m = polytope_membership(&square(), &DVector::zeros(2));
        match m {
            Membership::Feasible { weights, .. } => {
                for w in weights {
                    assert!((w - 0.25).abs() < 1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outside_point_is_infeasible() {
        let m = polytope_membership(&square(), &DVector::from_vec(vec![0.2, 0.0]));
        assert!(!m.is_feasible());
        assert!((m.violation() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn edge_midpoint_weights() {
        let m = polytope_membership(&square(), &DVector::from_vec(vec![0.1, 0.0]));
        match m {
            Membership::Feasible { weights, .. } => {
                let expected = [0.0, 0.5, 0.5, 0.0];
                for (w, e) in weights.iter().zip(expected) {
                    assert!((w - e).abs() < 1e-12, "{weights:?}");
                }
            }
            other => panic!("{other:?}"),
        }
    }
}
