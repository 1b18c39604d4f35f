//! Experiment configuration, the batch RL loop and result export.

mod config;
mod output;
pub mod validate;

pub use config::{ExperimentConfig, MModeKind};
pub use output::write_artifacts;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::critic::{fit_advantage, fit_value, CriticError};
use crate::learner::{
    batch_data, estimate_policy_gradient, performance_estimate, retain_window, safe_update,
    DataPoint, LearnerError, UpdateConfig,
};
use crate::mpc::{
    dlqr, membership_residual, steady_state_input, symmetric_rotation, MpcDims, MpcError,
    PolytopeW, ThetaParams,
};
use crate::nlp::SolverConfig;
use crate::plant::{rollout_batch, PlantError, PlantModel, RolloutConfig, TransitionBatch};
use crate::policy::ExplorationConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("safety abort at RL step {step}: {message}")]
    Safety { step: usize, message: String },
    #[error("solver failure at RL step {step}: {message}")]
    Solver { step: usize, message: String },
    #[error("initialization failed: {0}")]
    Init(#[from] MpcError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 2 for safety aborts, 3 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Safety { .. } => 2,
            HarnessError::Solver { .. } | HarnessError::Init(_) => 3,
            _ => 1,
        }
    }
}

pub fn mpc_dims(config: &ExperimentConfig) -> MpcDims {
    MpcDims {
        horizon: config.horizon,
        n_models: config.n_models,
        n_s: 2,
        n_a: 2,
    }
}

/// Initial nominal model, square `W`, LQR feedback and steady-state `ū`.
pub fn init_theta(config: &ExperimentConfig) -> Result<ThetaParams<f64>, MpcError> {
    let a0 = symmetric_rotation(config.beta_hat_deg.to_radians());
    let b0 = DMatrix::identity(2, 2);
    let lqr = dlqr(
        &a0,
        &b0,
        &(DMatrix::identity(2, 2) * config.lqr_state_weight),
        &(DMatrix::identity(2, 2) * config.lqr_input_weight),
    )?;
    let mut theta = ThetaParams {
        x_bar: ExperimentConfig::vector(&config.x_bar),
        u_bar: DVector::zeros(2),
        a0,
        b0,
        bias: DVector::zeros(2),
        k: lqr.k,
        w: PolytopeW::square(config.w_half_width),
    };
    theta.u_bar = steady_state_input(&theta)?;
    Ok(theta)
}

pub fn plant(config: &ExperimentConfig) -> PlantModel<f64> {
    PlantModel::example(
        config.kappa,
        config.beta_deg.to_radians(),
        config.noise_matrix(),
        config.clip_radius,
    )
}

pub fn exploration_config(config: &ExperimentConfig) -> ExplorationConfig<f64> {
    ExplorationConfig {
        sigma: config.sigma,
        shape: config.shape_matrix(),
        m_mode: config.m_mode(),
        corrections: config.corrections,
        solver: SolverConfig {
            tau: config.tau,
            residual_tolerance: config.residual_tolerance,
            ..SolverConfig::default()
        },
    }
}

/// Stage-cost input reference: the initial steady-state input.
pub fn rollout_config(config: &ExperimentConfig, theta0: &ThetaParams<f64>) -> RolloutConfig<f64> {
    RolloutConfig {
        dims: mpc_dims(config),
        exploration: exploration_config(config),
        s0: ExperimentConfig::vector(&config.s0),
        x_ref: ExperimentConfig::vector(&config.x_ref),
        u_ref: theta0.u_bar.clone(),
        rollouts: config.rollouts,
        steps: config.rollout_steps,
    }
}

pub fn update_config(config: &ExperimentConfig) -> UpdateConfig<f64> {
    UpdateConfig {
        alpha: config.alpha,
        dataset_window: config.dataset_window,
        mode: config.update_mode,
        tau: config.update_tau,
        ..UpdateConfig::default()
    }
}

/// One row of the safety report.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyRow {
    pub step: usize,
    /// Transitions constraining the update.
    pub retained: usize,
    /// Fresh transitions outside `W` under the parameters that produced them.
    pub outside_before_update: usize,
    /// Retained transitions outside `W` after the update.
    pub membership_violations: usize,
    pub max_membership_violation: f64,
    /// Real states with `‖s‖ > 1`.
    pub state_violations: usize,
    pub max_state_norm: f64,
}

/// Everything recorded during a run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub j_mean: Vec<f64>,
    pub j_std: Vec<f64>,
    /// θ used for the batch of each step.
    pub thetas: Vec<ThetaParams<f64>>,
    pub safety: Vec<SafetyRow>,
    pub first_batch: Option<TransitionBatch<f64>>,
    pub last_batch: Option<TransitionBatch<f64>>,
    pub gradient_norms: Vec<f64>,
    pub update_iterations: Vec<usize>,
}

/// A completed or aborted run.
#[derive(Debug)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub error: Option<HarnessError>,
}

fn count_outside(theta: &ThetaParams<f64>, batch: &TransitionBatch<f64>) -> usize {
    batch
        .transitions()
        .filter(|t| !membership_residual(theta, &t.s, &t.a, &t.s_plus).is_feasible())
        .count()
}

fn state_violations(batch: &TransitionBatch<f64>) -> usize {
    batch
        .transitions()
        .filter(|t| t.s_plus.norm() > 1.0)
        .count()
}

/// Runs the RL loop in memory. Aborts keep the trace recorded so far.
pub fn run_loop(config: &ExperimentConfig) -> RunOutcome {
    run_loop_with(config, |_| {})
}

/// [`run_loop`] with a callback invoked after each step's evaluation.
pub fn run_loop_with(config: &ExperimentConfig, progress: impl FnMut(&RunTrace)) -> RunOutcome {
    let mut trace = RunTrace::default();
    let error = run_into(config, &mut trace, progress).err();
    RunOutcome { trace, error }
}

fn run_into(
    config: &ExperimentConfig,
    trace: &mut RunTrace,
    mut progress: impl FnMut(&RunTrace),
) -> Result<(), HarnessError> {
    config.validate()?;
    let theta0 = init_theta(config)?;
    let plant = plant(config);
    let rollout_cfg = rollout_config(config, &theta0);
    let update_cfg = update_config(config);
    let mut theta = theta0;
    let mut dataset: Vec<DataPoint<f64>> = Vec::new();

    for step in 0..=config.rl_steps {
        trace.thetas.push(theta.clone());
        let batch = rollout_batch(&plant, &theta, &rollout_cfg, config.seed, step as u64).map_err(
            |e: PlantError| HarnessError::Solver {
                step,
                message: e.to_string(),
            },
        )?;
        let (j_mean, j_std) = performance_estimate(&batch, config.gamma);
        trace.j_mean.push(j_mean);
        trace.j_std.push(j_std);
        progress(trace);
        let mut row = SafetyRow {
            step,
            retained: 0,
            outside_before_update: count_outside(&theta, &batch),
            membership_violations: 0,
            max_membership_violation: 0.0,
            state_violations: state_violations(&batch),
            max_state_norm: batch.max_state_norm(),
        };
        if trace.first_batch.is_none() {
            trace.first_batch = Some(batch.clone());
        }
        trace.last_batch = Some(batch.clone());

        let abort = if row.state_violations > 0 {
            Some(format!(
                "{} real state(s) left the unit ball (max ‖s‖ = {})",
                row.state_violations, row.max_state_norm
            ))
        } else if row.outside_before_update > 0 && config.abort_on_outside_data {
            Some(format!(
                "{} observed transition(s) outside W before the update",
                row.outside_before_update
            ))
        } else {
            None
        };
        if let Some(message) = abort {
            trace.safety.push(row);
            return Err(HarnessError::Safety { step, message });
        }
        if step == config.rl_steps {
            trace.safety.push(row);
            break;
        }

        let critic_err = |e: CriticError| HarnessError::Solver {
            step,
            message: format!("critic: {e}"),
        };
        let x_ref = ExperimentConfig::vector(&config.x_ref);
        let value =
            fit_value(&batch, &x_ref, config.gamma, config.critic_floor).map_err(critic_err)?;
        let advantage =
            fit_advantage(&batch, &value, config.gamma, config.critic_floor).map_err(critic_err)?;
        let gradient = estimate_policy_gradient(&batch, &advantage);
        trace.gradient_norms.push(gradient.norm());

        dataset.extend(batch_data(&batch));
        retain_window(&mut dataset, config.dataset_window);
        row.retained = dataset.len();
        let outcome = match safe_update(&theta, &gradient, &dataset, &update_cfg) {
            Ok(o) => o,
            Err(
                e @ (LearnerError::InfeasibleFrozen { .. }
                | LearnerError::PostUpdateViolation { .. }),
            ) => {
                if let LearnerError::PostUpdateViolation { violations } = &e {
                    row.membership_violations = violations.len();
                    row.max_membership_violation =
                        violations.iter().map(|v| v.1).fold(0.0, f64::max);
                }
                trace.safety.push(row);
                return Err(HarnessError::Safety {
                    step,
                    message: e.to_string(),
                });
            }
            Err(e) => {
                trace.safety.push(row);
                return Err(HarnessError::Solver {
                    step,
                    message: e.to_string(),
                });
            }
        };
        row.max_membership_violation = outcome.max_violation;
        trace.update_iterations.push(outcome.newton_iterations);
        trace.safety.push(row);
        theta = outcome.theta;
    }
    Ok(())
}

/// Runs the experiment and writes all artifacts to `config.out_dir`,
/// including a failure bundle when the run aborts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunTrace, HarnessError> {
    run_experiment_with(config, |_| {})
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    progress: impl FnMut(&RunTrace),
) -> Result<RunTrace, HarnessError> {
    let outcome = run_loop_with(config, progress);
    let dir = std::path::Path::new(&config.out_dir);
    write_artifacts(dir, config, &outcome.trace, outcome.error.as_ref())?;
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::riccati_residual;

    #[test]
    fn initial_model() {
        let cfg = ExperimentConfig::case_defaults(1).unwrap();
        let th = init_theta(&cfg).unwrap();
        let b = 20f64.to_radians();
        let expect = DMatrix::from_row_slice(2, 2, &[b.cos(), b.sin(), b.sin(), b.cos()]);
        assert!((&th.a0 - expect).amax() < 1e-15);
        let mut flat = cfg.clone();
        flat.beta_hat_deg = 0.0;
        assert_eq!(init_theta(&flat).unwrap().a0, DMatrix::identity(2, 2));
        let q = DMatrix::identity(2, 2) * cfg.lqr_state_weight;
        let r = DMatrix::identity(2, 2) * cfg.lqr_input_weight;
        let p = dlqr(&th.a0, &th.b0, &q, &r).unwrap().p;
        assert!(riccati_residual(&th.a0, &th.b0, &q, &r, &p).amax() <= 1e-10);
        let ss = &th.a0 * &th.x_bar + &th.b0 * &th.u_bar + &th.bias - &th.x_bar;
        assert!(ss.amax() < 1e-14);
    }
}
