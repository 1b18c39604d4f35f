//! Policy-gradient assembly and the safe parameter update.

mod safe;

pub use safe::{DataPoint, SafeUpdateProblem};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::AdvantageModel;
use crate::mpc::{membership_residual, Membership, ThetaParams};
use crate::nlp::{solve, NlpError, PrimalDualPoint, SolverConfig};
use crate::plant::TransitionBatch;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Error)]
pub enum LearnerError {
    #[error(
        "{} transition(s) lie outside W at the current parameters and the model is frozen",
        violations.len()
    )]
    InfeasibleFrozen { violations: Vec<(usize, f64)> },
    #[error("safe update solve failed: {0}")]
    Solver(#[from] NlpError),
    #[error("{} transition(s) violate membership after the update", violations.len())]
    PostUpdateViolation { violations: Vec<(usize, f64)> },
    #[error("invalid update configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    UnconstrainedGradient,
    SafeConstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateConfig<T: Scalar> {
    pub alpha: T,
    pub dataset_window: usize,
    pub mode: UpdateMode,
    /// Adaptable flat-θ indices; `None` adapts everything.
    pub free: Option<Vec<usize>>,
    /// Relaxation of the final solve.
    pub tau: T,
    pub solver: SolverConfig<T>,
}

impl<T: Scalar> Default for UpdateConfig<T> {
    fn default() -> Self {
        Self {
            alpha: lit(0.05),
            dataset_window: 600,
            mode: UpdateMode::SafeConstrained,
            free: None,
            tau: lit(1e-8),
            solver: SolverConfig {
                max_newton_iterations: 2000,
                ..SolverConfig::default()
            },
        }
    }
}

/// `∇_θπ M ∇_θπᵀ w` averaged over the transitions of the batch.
pub fn estimate_policy_gradient<T: Scalar>(
    batch: &TransitionBatch<T>,
    advantage: &AdvantageModel<T>,
) -> DVector<T> {
    let n = advantage.w.len();
    let sum = batch.transitions().fold(DVector::zeros(n), |acc, t| {
        let r = &t.record;
        acc + &r.nabla_theta_pi * (&r.m * r.nabla_theta_pi.tr_mul(&advantage.w))
    });
    sum / lit::<T>(batch.len().max(1) as f64)
}

/// Mean and sample standard deviation of the per-rollout discounted cost.
pub fn performance_estimate<T: Scalar>(batch: &TransitionBatch<T>, gamma: T) -> (T, T) {
    let returns: Vec<T> = batch
        .rollouts
        .iter()
        .map(|r| {
            r.iter()
                .rev()
                .fold(T::zero(), |acc, t| t.cost + gamma * acc)
        })
        .collect();
    if returns.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = lit::<T>(returns.len() as f64);
    let mean = returns.iter().fold(T::zero(), |a, &x| a + x) / n;
    if returns.len() < 2 {
        return (mean, T::zero());
    }
    let var = returns
        .iter()
        .fold(T::zero(), |a, &x| a + (x - mean) * (x - mean))
        / (n - T::one());
    (mean, var.sqrt())
}

/// Result of [`safe_update`].
#[derive(Debug, Clone)]
pub struct UpdateOutcome<T: Scalar> {
    pub theta: ThetaParams<T>,
    /// `½‖θ − θ₋‖² + α gᵀ(θ − θ₋)`.
    pub objective: T,
    pub newton_iterations: usize,
    /// Largest LP violation among retained points after the update.
    pub max_violation: f64,
}

/// Flat indices of θ entries that appear in the membership constraints.
fn constraint_indices<T: Scalar>(theta: &ThetaParams<T>) -> Vec<usize> {
    let l = theta.layout();
    let mut out = Vec::new();
    for r in 0..l.n_s {
        out.extend((0..l.n_s).map(|c| l.a0(r, c)));
        out.extend((0..l.n_a).map(|c| l.b0(r, c)));
        out.push(l.bias(r));
    }
    for v in 0..l.n_models {
        out.extend((0..l.n_s).map(|i| l.w(v, i)));
    }
    out
}

fn membership_violations<T: Scalar>(
    theta: &ThetaParams<T>,
    data: &[DataPoint<T>],
) -> (Vec<(usize, f64)>, f64) {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for (k, pt) in data.iter().enumerate() {
        let m = membership_residual(theta, &pt.s, &pt.a, &pt.s_plus);
        worst = worst.max(m.violation());
        if let Membership::Infeasible { violation } = m {
            out.push((k, violation));
        }
    }
    (out, worst)
}

fn objective<T: Scalar>(
    theta: &DVector<T>,
    theta_minus: &DVector<T>,
    scaled_gradient: &DVector<T>,
) -> T {
    let diff = theta - theta_minus;
    diff.norm_squared() * lit::<T>(0.5) + scaled_gradient.dot(&diff)
}

/// Gradient step projected onto the parameters consistent with all data.
pub fn safe_update<T: Scalar>(
    theta_minus: &ThetaParams<T>,
    gradient: &DVector<T>,
    data: &[DataPoint<T>],
    config: &UpdateConfig<T>,
) -> Result<UpdateOutcome<T>, LearnerError> {
    let layout = theta_minus.layout();
    if gradient.len() != layout.len() {
        return Err(LearnerError::InvalidConfig(format!(
            "gradient has length {}, expected {}",
            gradient.len(),
            layout.len()
        )));
    }
    if !(config.alpha >= T::zero()) {
        return Err(LearnerError::InvalidConfig(
            "alpha must be non-negative".into(),
        ));
    }
    let flat_minus = theta_minus.flatten();
    let free = config
        .free
        .clone()
        .unwrap_or_else(|| (0..layout.len()).collect());
    let mut mask = vec![false; layout.len()];
    for &i in &free {
        if i >= layout.len() {
            return Err(LearnerError::InvalidConfig(format!(
                "free index {i} out of range"
            )));
        }
        mask[i] = true;
    }
    let scaled: DVector<T> = DVector::from_fn(layout.len(), |i, _| {
        if mask[i] {
            config.alpha * gradient[i]
        } else {
            T::zero()
        }
    });

    if config.mode == UpdateMode::UnconstrainedGradient {
        let flat = &flat_minus - &scaled;
        let theta = ThetaParams::unflatten(&flat, layout).expect("layout length");
        let (_, max_violation) = membership_violations(&theta, data);
        return Ok(UpdateOutcome {
            objective: objective(&flat, &flat_minus, &scaled),
            theta,
            newton_iterations: 0,
            max_violation,
        });
    }

    let (before, _) = membership_violations(theta_minus, data);
    let adaptable = constraint_indices(theta_minus).iter().any(|&i| mask[i]);
    if !before.is_empty() && !adaptable {
        return Err(LearnerError::InfeasibleFrozen { violations: before });
    }

    let problem = SafeUpdateProblem::new(theta_minus, &scaled, free, data);
    let tau0 = lit::<T>(1e-2);
    let (z, iterations) = match continuation(&problem, problem.start(tau0), config) {
        Ok(done) => done,
        Err(first) => match problem.feasible_start(tau0) {
            Some(z0) => {
                let (z, it) = continuation(&problem, z0, config).map_err(|e| e.0)?;
                (z, it + first.1)
            }
            None => return Err(first.0.into()),
        },
    };

    let flat = problem.full_theta(&z.y);
    let theta = ThetaParams::unflatten(&flat, layout).expect("layout length");
    let (after, max_violation) = membership_violations(&theta, data);
    if !after.is_empty() {
        return Err(LearnerError::PostUpdateViolation { violations: after });
    }
    Ok(UpdateOutcome {
        objective: objective(&flat, &flat_minus, &scaled),
        theta,
        newton_iterations: iterations,
        max_violation,
    })
}

/// `τ` continuation from `z` down to `config.tau`. On failure returns the
/// error with the iterations spent.
fn continuation<T: Scalar>(
    problem: &SafeUpdateProblem<'_, T>,
    mut z: PrimalDualPoint<T>,
    config: &UpdateConfig<T>,
) -> Result<(PrimalDualPoint<T>, usize), (NlpError, usize)> {
    let mut iterations = 0;
    let mut tau = z.tau;
    loop {
        let last = !(tau > config.tau);
        let tau_now = if last { config.tau } else { tau };
        let mut cfg = config.solver.with_tau(tau_now);
        if !last {
            cfg.residual_tolerance = cfg.residual_tolerance.max(tau_now * lit(1e-2));
        }
        let rep = solve(problem, &cfg, Some(&z)).map_err(|e| (e, iterations))?;
        iterations += rep.iterations;
        z = rep.point;
        if last {
            return Ok((z, iterations));
        }
        tau *= lit(0.1);
    }
}

/// Keeps the most recent `window` points.
pub fn retain_window<T: Scalar>(data: &mut Vec<DataPoint<T>>, window: usize) {
    if data.len() > window {
        data.drain(..data.len() - window);
    }
}

/// Data points of a batch in rollout-major order.
pub fn batch_data<T: Scalar>(batch: &TransitionBatch<T>) -> Vec<DataPoint<T>> {
    batch
        .transitions()
        .map(|t| DataPoint {
            s: t.s.clone(),
            a: t.a.clone(),
            s_plus: t.s_plus.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::Transition;
    use crate::policy::ExplorationRecord;
    use nalgebra::DMatrix;

    fn batch(costs: &[Vec<f64>]) -> TransitionBatch<f64> {
        let z = DVector::zeros(2);
        let rec = ExplorationRecord {
            s: z.clone(),
            a: z.clone(),
            e: z.clone(),
            pi: z.clone(),
            nabla_theta_pi: DMatrix::identity(2, 2),
            m: DMatrix::identity(2, 2),
            c: z.clone(),
        };
        TransitionBatch {
            rollouts: costs
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|&cost| Transition {
                            s: z.clone(),
                            a: z.clone(),
                            cost,
                            s_plus: z.clone(),
                            record: rec.clone(),
                        })
                        .collect()
                })
                .collect(),
            seed: 0,
            step: 0,
        }
    }

    #[test]
    fn geometric_partial_sum() {
        let (m, s) = performance_estimate(&batch(&[vec![1.0; 20], vec![1.0; 20]]), 0.99);
        let expect: f64 = (0..20).map(|k| 0.99f64.powi(k)).sum();
        assert!((m - expect).abs() < 1e-12);
        assert!((expect - 18.209).abs() < 1e-3);
        assert_eq!(s, 0.0);
        assert_eq!(
            performance_estimate(&batch(&[vec![0.0; 5]]), 0.99),
            (0.0, 0.0)
        );
    }

    #[test]
    fn identity_record_returns_w() {
        let w = DVector::from_vec(vec![0.3, -0.7]);
        let g = estimate_policy_gradient(&batch(&[vec![1.0]]), &AdvantageModel { w: w.clone() });
        assert_eq!(g, w);
    }

    #[test]
    fn averaged_over_transitions() {
        let w = DVector::from_vec(vec![1.0, 2.0]);
        let g = estimate_policy_gradient(
            &batch(&[vec![1.0; 3], vec![1.0; 2]]),
            &AdvantageModel { w: w.clone() },
        );
        assert_eq!(g, w);
    }

    #[test]
    fn window_keeps_latest() {
        let mut d: Vec<DataPoint<f64>> = (0..5)
            .map(|i| DataPoint {
                s: DVector::from_element(1, i as f64),
                a: DVector::zeros(1),
                s_plus: DVector::zeros(1),
            })
            .collect();
        retain_window(&mut d, 3);
        assert_eq!(
            d.iter().map(|p| p.s[0]).collect::<Vec<_>>(),
            vec![2.0, 3.0, 4.0]
        );
    }
}
