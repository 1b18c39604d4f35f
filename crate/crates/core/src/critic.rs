//! Batch LSTD critic: a quadratic value function and the compatible
//! advantage `Â = wᵀ ∇_θπ M (a − π − c)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::TransitionBatch;
use crate::policy::ExplorationRecord;
use crate::scalar::{lit, Scalar};

/// Default relative saturation of the smallest singular values.
pub const DEFAULT_SV_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriticError {
    #[error("empty transition batch")]
    EmptyBatch,
    #[error("value features are all zero")]
    ZeroFeatures,
    #[error("exploration degenerate: all advantage features vanish")]
    ExplorationDegenerate,
}

/// `[1, δ, δᵢδⱼ (i ≤ j)]` with `δ = s − x_ref`.
pub fn quadratic_features<T: Scalar>(s: &DVector<T>, x_ref: &DVector<T>) -> DVector<T> {
    let d = s - x_ref;
    let n = d.len();
    let mut out = Vec::with_capacity(1 + n + n * (n + 1) / 2);
    out.push(T::one());
    out.extend(d.iter().copied());
    for i in 0..n {
        for j in i..n {
            out.push(d[i] * d[j]);
        }
    }
    DVector::from_vec(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueModel<T: Scalar> {
    pub v: DVector<T>,
    pub x_ref: DVector<T>,
}

impl<T: Scalar> ValueModel<T> {
    pub fn value(&self, s: &DVector<T>) -> T {
        quadratic_features(s, &self.x_ref).dot(&self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageModel<T: Scalar> {
    pub w: DVector<T>,
}

/// Solves `A x = b` through an SVD whose singular values are saturated from
/// below at `floor · σ_max`. `None` if `A = 0`.
pub fn saturated_solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>, floor: T) -> Option<DVector<T>> {
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if !(s_max > T::zero()) {
        return None;
    }
    let cut = floor * s_max;
    let u = svd.u.as_ref().expect("requested");
    let v_t = svd.v_t.as_ref().expect("requested");
    let proj = u.tr_mul(b);
    let scaled = DVector::from_fn(proj.len(), |i, _| proj[i] / svd.singular_values[i].max(cut));
    Some(v_t.tr_mul(&scaled))
}

/// LSTD: `Σ (L + γV(s⁺) − V(s)) ρ(s) = 0`.
pub fn fit_value<T: Scalar>(
    batch: &TransitionBatch<T>,
    x_ref: &DVector<T>,
    gamma: T,
    floor: T,
) -> Result<ValueModel<T>, CriticError> {
    if batch.is_empty() {
        return Err(CriticError::EmptyBatch);
    }
    let n = quadratic_features(x_ref, x_ref).len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for t in batch.transitions() {
        let rho = quadratic_features(&t.s, x_ref);
        let rho_next = quadratic_features(&t.s_plus, x_ref);
        a += &rho * (&rho - rho_next * gamma).transpose();
        b += &rho * t.cost;
    }
    let v = saturated_solve(&a, &b, floor).ok_or(CriticError::ZeroFeatures)?;
    Ok(ValueModel {
        v,
        x_ref: x_ref.clone(),
    })
}

/// `∇_θπ M (a − π − c)`.
pub fn advantage_features<T: Scalar>(record: &ExplorationRecord<T>, a: &DVector<T>) -> DVector<T> {
    &record.nabla_theta_pi * (&record.m * (a - &record.pi - &record.c))
}

/// LSTD on `Q = V + Â` with `V` fixed.
pub fn fit_advantage<T: Scalar>(
    batch: &TransitionBatch<T>,
    value: &ValueModel<T>,
    gamma: T,
    floor: T,
) -> Result<AdvantageModel<T>, CriticError> {
    let first = batch.transitions().next().ok_or(CriticError::EmptyBatch)?;
    let n = first.record.nabla_theta_pi.nrows();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for t in batch.transitions() {
        let phi = advantage_features(&t.record, &t.a);
        let delta = t.cost + gamma * value.value(&t.s_plus) - value.value(&t.s);
        a += &phi * phi.transpose();
        b += phi * delta;
    }
    let w = saturated_solve(&a, &b, floor).ok_or(CriticError::ExplorationDegenerate)?;
    Ok(AdvantageModel { w })
}

pub fn advantage_value<T: Scalar>(
    model: &AdvantageModel<T>,
    record: &ExplorationRecord<T>,
    a: &DVector<T>,
) -> T {
    model.w.dot(&advantage_features(record, a))
}

/// `Σ δ^V ρ(s)` at `value`, the LSTD optimality residual.
pub fn value_residual<T: Scalar>(
    batch: &TransitionBatch<T>,
    value: &ValueModel<T>,
    gamma: T,
) -> DVector<T> {
    let n = value.v.len();
    batch.transitions().fold(DVector::zeros(n), |acc, t| {
        let delta = t.cost + gamma * value.value(&t.s_plus) - value.value(&t.s);
        acc + quadratic_features(&t.s, &value.x_ref) * delta
    })
}

/// `Σ δ^Q φ` at `(value, advantage)`.
pub fn advantage_residual<T: Scalar>(
    batch: &TransitionBatch<T>,
    value: &ValueModel<T>,
    advantage: &AdvantageModel<T>,
    gamma: T,
) -> DVector<T> {
    let n = advantage.w.len();
    batch.transitions().fold(DVector::zeros(n), |acc, t| {
        let phi = advantage_features(&t.record, &t.a);
        let delta =
            t.cost + gamma * value.value(&t.s_plus) - value.value(&t.s) - phi.dot(&advantage.w);
        acc + phi * delta
    })
}

pub fn default_floor<T: Scalar>() -> T {
    lit(DEFAULT_SV_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::Transition;

    fn record(s: &DVector<f64>, a: &DVector<f64>, pi: &DVector<f64>) -> ExplorationRecord<f64> {
        ExplorationRecord {
            s: s.clone(),
            a: a.clone(),
            e: a - pi,
            pi: pi.clone(),
            nabla_theta_pi: DMatrix::identity(2, 2),
            m: DMatrix::identity(2, 2),
            c: DVector::zeros(2),
        }
    }

    fn transition(s: &[f64], cost: f64, s_plus: &[f64]) -> Transition<f64> {
        let s = DVector::from_row_slice(s);
        let a = DVector::zeros(2);
        Transition {
            record: record(&s, &a, &a),
            s,
            a,
            cost,
            s_plus: DVector::from_row_slice(s_plus),
        }
    }

    fn batch(ts: Vec<Transition<f64>>) -> TransitionBatch<f64> {
        TransitionBatch {
            rollouts: vec![ts],
            seed: 0,
            step: 0,
        }
    }

    #[test]
    fn feature_count() {
        let f = quadratic_features(&DVector::from_vec(vec![1.0, 2.0]), &DVector::zeros(2));
        assert_eq!(f.as_slice(), &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn recurring_state_value() {
        let b = batch(vec![transition(&[0.3, 0.1], 1.0, &[0.3, 0.1]); 5]);
        let v = fit_value(&b, &DVector::zeros(2), 0.99, 1e-6).unwrap();
        assert!((v.value(&DVector::from_vec(vec![0.3, 0.1])) - 100.0).abs() < 1e-8);
    }

    #[test]
    fn zero_weights_give_zero_advantage() {
        let s = DVector::from_vec(vec![0.1, 0.2]);
        let r = record(&s, &DVector::from_vec(vec![1.0, 2.0]), &DVector::zeros(2));
        let m = AdvantageModel {
            w: DVector::zeros(2),
        };
        assert_eq!(advantage_value(&m, &r, &r.a), 0.0);
        let m = AdvantageModel {
            w: DVector::from_vec(vec![1.0, 0.0]),
        };
        assert_eq!(advantage_value(&m, &r, &r.a), 1.0);
    }

    #[test]
    fn no_exploration_is_degenerate() {
        let b = batch(vec![transition(&[0.3, 0.1], 1.0, &[0.2, 0.1]); 3]);
        let v = fit_value(&b, &DVector::zeros(2), 0.9, 1e-6).unwrap();
        assert_eq!(
            fit_advantage(&b, &v, 0.9, 1e-6),
            Err(CriticError::ExplorationDegenerate)
        );
    }

    #[test]
    fn empty_batch_rejected() {
        assert_eq!(
            fit_value(&batch(vec![]), &DVector::zeros(2), 0.9, 1e-6),
            Err(CriticError::EmptyBatch)
        );
    }
}
