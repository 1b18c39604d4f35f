use nalgebra::DVector;

use super::{KktSolve, NlpError, NlpProblem, PrimalDualPoint};
use crate::scalar::{lit, to_f64, Scalar};

/// Interior-point settings. `tau` is held fixed during a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T: Scalar> {
    pub tau: T,
    pub residual_tolerance: T,
    pub max_newton_iterations: usize,
    pub fraction_to_boundary: T,
    pub regularization_floor: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            tau: lit(1e-2),
            residual_tolerance: lit(1e-10),
            max_newton_iterations: 200,
            fraction_to_boundary: lit(0.995),
            regularization_floor: lit(1e-10),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_tau(mut self, tau: T) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<(), NlpError> {
        if !(self.tau > T::zero()) {
            return Err(NlpError::InvalidConfig("tau must be positive".into()));
        }
        if !(self.fraction_to_boundary > T::zero() && self.fraction_to_boundary < T::one()) {
            return Err(NlpError::InvalidConfig(
                "fraction_to_boundary must lie in (0, 1)".into(),
            ));
        }
        if self.regularization_floor < T::zero() {
            return Err(NlpError::InvalidConfig(
                "regularization_floor must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Converged point plus iteration log.
#[derive(Debug, Clone)]
pub struct SolveReport<T: Scalar> {
    pub point: PrimalDualPoint<T>,
    pub iterations: usize,
    /// `‖r_τ‖_∞` at the returned point.
    pub residual_norm: T,
    /// `‖r_τ‖_∞` of every accepted iterate, starting with the initial point.
    pub residual_history: Vec<T>,
}

/// Result of one damped Newton step.
#[derive(Debug, Clone)]
pub struct NewtonStep<T: Scalar> {
    pub direction: DVector<T>,
    pub step_length: T,
    pub next: PrimalDualPoint<T>,
    /// `‖r_τ‖_2` at `next`.
    pub residual_norm: T,
}

/// `r_τ(z)` with dimension checks.
pub fn evaluate_residual<T: Scalar, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z: &PrimalDualPoint<T>,
) -> Result<DVector<T>, NlpError> {
    check_dims(problem, z)?;
    Ok(problem.residual(z))
}

fn check_dims<T: Scalar, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z: &PrimalDualPoint<T>,
) -> Result<(), NlpError> {
    let d = problem.dims();
    let checks = [
        ("primal vector", d.n_y, z.y.len()),
        ("equality multipliers", d.n_eq, z.lambda.len()),
        ("inequality multipliers", d.n_in, z.mu.len()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(NlpError::DimensionMismatch {
                what,
                expected,
                got,
            });
        }
    }
    Ok(())
}

fn strictly_interior<T: Scalar, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z: &PrimalDualPoint<T>,
) -> bool {
    z.mu_positive() && problem.ineq_values(&z.y).iter().all(|&h| h < T::zero())
}

fn factor_with_regularization<T: Scalar, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z: &PrimalDualPoint<T>,
    config: &SolverConfig<T>,
) -> Result<Box<dyn KktSolve<T>>, NlpError> {
    match problem.factor_kkt(z, T::zero()) {
        Ok(f) => return Ok(f),
        Err(NlpError::Singular { .. }) => {}
        Err(e) => return Err(e),
    }
    let mut reg = config.regularization_floor.max(lit(1e-12));
    let mut last = NlpError::Singular {
        context: "relaxed KKT Jacobian",
        regularization: to_f64(reg),
    };
    for _ in 0..8 {
        match problem.factor_kkt(z, reg) {
            Ok(f) => return Ok(f),
            Err(NlpError::Singular { context, .. }) => {
                last = NlpError::Singular {
                    context,
                    regularization: to_f64(reg),
                };
            }
            Err(e) => return Err(e),
        }
        reg *= lit(100.0);
    }
    Err(last)
}

/// One damped Newton step on `r_τ(z) = 0` from a strictly interior `z`.
///
/// The step length is the largest `α ≤ 1` with `μ + αΔμ ≥ (1 − ftb) μ` and
/// `h + α(h(y + Δy) − h) ≥ (1 − ftb) h` (the chord bound, exact for linear and
/// conservative for convex `h`), halved until `h(y + αΔy) < 0` and `‖r_τ‖_2`
/// decreases.
pub fn newton_step<T: Scalar, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    z: &PrimalDualPoint<T>,
    config: &SolverConfig<T>,
) -> Result<NewtonStep<T>, NlpError> {
    check_dims(problem, z)?;
    let d = problem.dims();
    let r = problem.residual(z);
    let r_norm = r.norm();
    let factor = factor_with_regularization(problem, z, config)?;
    let direction = -factor.solve(&r);
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(NlpError::Singular {
            context: "Newton direction",
            regularization: to_f64(config.regularization_floor),
        });
    }

    let mut alpha = T::one();
    let dmu = direction.rows(d.n_y + d.n_eq, d.n_in);
    for i in 0..d.n_in {
        if dmu[i] < T::zero() {
            alpha = alpha.min(config.fraction_to_boundary * z.mu[i] / (-dmu[i]));
        }
    }

    let h0 = problem.ineq_values(&z.y);
    let h1 = problem.ineq_values(&(&z.y + direction.rows(0, d.n_y)));
    for i in 0..d.n_in {
        let rise = h1[i] - h0[i];
        if rise > T::zero() {
            alpha = alpha.min(config.fraction_to_boundary * (-h0[i]) / rise);
        }
    }

    let half = lit::<T>(0.5);
    let armijo = lit::<T>(1e-4);
    for _ in 0..80 {
        let trial = z.stepped(&direction, alpha);
        if problem.ineq_values(&trial.y).iter().all(|&h| h < T::zero()) {
            let trial_norm = problem.residual(&trial).norm();
            if trial_norm.is_finite() && trial_norm <= (T::one() - armijo * alpha) * r_norm {
                return Ok(NewtonStep {
                    direction,
                    step_length: alpha,
                    next: trial,
                    residual_norm: trial_norm,
                });
            }
        }
        alpha *= half;
    }
    Err(NlpError::LineSearch {
        iterations: 0,
        residual_norm: to_f64(r.amax()),
        last_iterate: z.to_f64_vec(),
    })
}

/// Solves `r_τ(z) = 0` to `‖r_τ‖_∞ ≤ residual_tolerance` keeping `h < 0`,
/// `μ > 0` at every accepted iterate.
///
/// Starts from `warm_start` (its `τ` is replaced by `config.tau`) or from the
/// problem's own interior point.
pub fn solve<T: Scalar, P: NlpProblem<T> + ?Sized>(
    problem: &P,
    config: &SolverConfig<T>,
    warm_start: Option<&PrimalDualPoint<T>>,
) -> Result<SolveReport<T>, NlpError> {
    config.validate()?;
    let mut z = match warm_start {
        Some(w) => {
            let mut w = w.clone();
            w.tau = config.tau;
            w
        }
        None => problem
            .initial_point(config.tau)
            .ok_or(NlpError::NotInterior)?,
    };
    check_dims(problem, &z)?;
    if !strictly_interior(problem, &z) {
        return Err(NlpError::NotInterior);
    }

    let mut res = problem.residual(&z).amax();
    let mut history = vec![res];
    let mut iterations = 0;
    while res > config.residual_tolerance {
        if iterations >= config.max_newton_iterations {
            return Err(NlpError::MaxIterations {
                iterations,
                residual_norm: to_f64(res),
                last_iterate: z.to_f64_vec(),
            });
        }
        let step = newton_step(problem, &z, config).map_err(|e| match e {
            NlpError::LineSearch {
                residual_norm,
                last_iterate,
                ..
            } => NlpError::LineSearch {
                iterations,
                residual_norm,
                last_iterate,
            },
            other => other,
        })?;
        z = step.next;
        res = problem.residual(&z).amax();
        history.push(res);
        iterations += 1;
    }
    Ok(SolveReport {
        point: z,
        iterations,
        residual_norm: res,
        residual_history: history,
    })
}
