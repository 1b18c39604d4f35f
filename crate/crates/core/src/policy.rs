//! Deterministic policy, safe exploration and the exploration statistics.
//!
//! The exploratory action is the first input of the NLP solved with the
//! disturbed cost `Φ + dᵀu₀`, `d ~ N(0, σΣ)`. Its mean offset `c` and inverse
//! covariance `M` follow from the solution sensitivities at `d = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlp::{solve, NlpError, ParametricNlp, PrimalDualPoint, SolveReport, SolverConfig};
use crate::scalar::{lit, to_f64, Scalar};
use crate::sensitivity::{
    first_order, policy_jacobians, second_order, SensitivityBundle, SensitivityError,
};

/// Relative floor on eigenvalues kept by the pseudo-inverse.
pub const DEFAULT_PINV_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Error)]
pub enum PolicyError {
    #[error("{stage} solve failed: {source}")]
    Solver {
        stage: &'static str,
        #[source]
        source: NlpError,
    },
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(
        "exploration covariance ∂g/∂d Σ ∂g/∂dᵀ is singular (eigenvalues {min_eig:e} / {max_eig:e}); \
         use the pseudo-inverse mode"
    )]
    SingularCovariance { min_eig: f64, max_eig: f64 },
    #[error("invalid exploration configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MMode {
    PlainInverse,
    /// Eigenvalues below `floor · λ_max` are dropped.
    PseudoInverse {
        floor: f64,
    },
}

impl Default for MMode {
    fn default() -> Self {
        MMode::PseudoInverse {
            floor: DEFAULT_PINV_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationConfig<T: Scalar> {
    pub sigma: T,
    /// `Σ`, symmetric positive definite.
    pub shape: DMatrix<T>,
    pub m_mode: MMode,
    /// With `false`, `M = I` and `c = 0` (uncorrected estimator).
    pub corrections: bool,
    /// Interior-point settings; `solver.tau` is the relaxation `τ`.
    pub solver: SolverConfig<T>,
}

impl<T: Scalar> ExplorationConfig<T> {
    pub fn new(sigma: T, shape: DMatrix<T>, tau: T) -> Self {
        Self {
            sigma,
            shape,
            m_mode: MMode::default(),
            corrections: true,
            solver: SolverConfig::default().with_tau(tau),
        }
    }

    pub fn tau(&self) -> T {
        self.solver.tau
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.sigma > T::zero()) {
            return Err(PolicyError::InvalidConfig("sigma must be positive".into()));
        }
        self.shape_factor()?;
        self.solver
            .validate()
            .map_err(|e| PolicyError::InvalidConfig(e.to_string()))
    }

    fn shape_factor(&self) -> Result<DMatrix<T>, PolicyError> {
        let s = &self.shape;
        if !s.is_square() {
            return Err(PolicyError::InvalidConfig("Sigma must be square".into()));
        }
        let asym = (s - s.transpose()).amax();
        if asym > lit::<T>(1e-12) * s.amax().max(T::one()) {
            return Err(PolicyError::InvalidConfig("Sigma must be symmetric".into()));
        }
        s.clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| PolicyError::InvalidConfig("Sigma must be positive definite".into()))
    }

    /// Draws `d ~ N(0, σΣ)`.
    pub fn sample_disturbance<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<DVector<T>, PolicyError> {
        let l = self.shape_factor()?;
        let xi = DVector::from_fn(l.nrows(), |_, _| {
            lit::<T>(rng.sample::<f64, _>(StandardNormal))
        });
        Ok(l * xi * self.sigma.sqrt())
    }
}

/// Per-timestep data used by the critic and the gradient estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: DeserializeOwned"))]
pub struct ExplorationRecord<T: Scalar> {
    pub s: DVector<T>,
    pub a: DVector<T>,
    /// `a − π`.
    pub e: DVector<T>,
    pub pi: DVector<T>,
    /// `∇_θ π`, `n_θ × n_a`.
    pub nabla_theta_pi: DMatrix<T>,
    pub m: DMatrix<T>,
    pub c: DVector<T>,
}

/// Statistics of the exploration at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationStats<T: Scalar> {
    pub m: DMatrix<T>,
    pub c: DVector<T>,
    pub nabla_theta_pi: DMatrix<T>,
    pub dg_dd: DMatrix<T>,
}

/// `π = u₀^τ(s, θ, 0)` with the solve report.
pub fn deterministic_action<T: Scalar, P: ParametricNlp<T>>(
    problem: &P,
    solver: &SolverConfig<T>,
    warm_start: Option<&PrimalDualPoint<T>>,
) -> Result<(DVector<T>, SolveReport<T>), PolicyError> {
    let report = solve(problem, solver, warm_start).map_err(|source| PolicyError::Solver {
        stage: "deterministic",
        source,
    })?;
    let pi = report.point.y.rows(0, problem.n_d()).into_owned();
    Ok((pi, report))
}

fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// `∂g/∂d Σ ∂g/∂dᵀ`.
pub fn exploration_covariance<T: Scalar>(dg_dd: &DMatrix<T>, shape: &DMatrix<T>) -> DMatrix<T> {
    symmetrize(&(dg_dd * shape * dg_dd.transpose()))
}

fn inverse_covariance<T: Scalar>(cov: &DMatrix<T>, mode: MMode) -> Result<DMatrix<T>, PolicyError> {
    let eig = cov.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(T::zero(), |m, &v| m.max(v));
    let min_eig = eig.eigenvalues.iter().fold(max_eig, |m, &v| m.min(v));
    match mode {
        MMode::PlainInverse => {
            let singular = !(min_eig > T::eps() * lit::<T>(cov.nrows() as f64) * max_eig);
            if singular {
                return Err(PolicyError::SingularCovariance {
                    min_eig: to_f64(min_eig),
                    max_eig: to_f64(max_eig),
                });
            }
            let inv = cov.clone().cholesky().map(|c| c.inverse()).ok_or(
                PolicyError::SingularCovariance {
                    min_eig: to_f64(min_eig),
                    max_eig: to_f64(max_eig),
                },
            )?;
            Ok(symmetrize(&inv))
        }
        MMode::PseudoInverse { floor } => {
            let cut = lit::<T>(floor) * max_eig;
            let inv_vals = eig.eigenvalues.map(|v| {
                if v > cut && v > T::zero() {
                    T::one() / v
                } else {
                    T::zero()
                }
            });
            let q = &eig.eigenvectors;
            Ok(symmetrize(
                &(q * DMatrix::from_diagonal(&inv_vals) * q.transpose()),
            ))
        }
    }
}

/// `c_k = ½ Σ_ij ∂²g_k/∂dᵢ∂dⱼ (σΣ)_ij`.
pub fn mean_correction<T: Scalar>(
    d2g_dd2: &[DMatrix<T>],
    sigma: T,
    shape: &DMatrix<T>,
) -> DVector<T> {
    let half = lit::<T>(0.5);
    DVector::from_fn(d2g_dd2.len(), |k, _| {
        half * sigma * d2g_dd2[k].component_mul(shape).sum()
    })
}

/// `M`, `c` and `∇_θ π` from the sensitivities of a solved `d = 0` instance.
pub fn exploration_stats<T: Scalar, P: ParametricNlp<T>>(
    problem: &P,
    z: &PrimalDualPoint<T>,
    config: &ExplorationConfig<T>,
) -> Result<(ExplorationStats<T>, SensitivityBundle<T>), PolicyError> {
    let mut bundle = first_order(problem, z)?;
    let (nabla_theta_pi, dg_dd) = policy_jacobians(&bundle);
    let n_a = dg_dd.nrows();
    let (m, c) = if config.corrections {
        let cov = exploration_covariance(&dg_dd, &config.shape);
        let m = inverse_covariance(&cov, config.m_mode)?;
        let d2 = second_order(problem, z, &mut bundle);
        (m, mean_correction(d2, config.sigma, &config.shape))
    } else {
        (DMatrix::identity(n_a, n_a), DVector::zeros(n_a))
    };
    Ok((
        ExplorationStats {
            m,
            c,
            nabla_theta_pi,
            dg_dd,
        },
        bundle,
    ))
}

/// Everything produced at one exploratory timestep.
#[derive(Debug, Clone)]
pub struct Exploration<T: Scalar> {
    pub action: DVector<T>,
    pub record: ExplorationRecord<T>,
    pub disturbance: DVector<T>,
    /// Solution of the undisturbed problem.
    pub nominal: PrimalDualPoint<T>,
    /// Solution of the disturbed problem.
    pub disturbed: PrimalDualPoint<T>,
    /// Newton iterations of the two solves.
    pub iterations: (usize, usize),
    pub retried: bool,
}

/// Solves the disturbed problem from the `d = 0` solution.
pub fn disturbed_action<T: Scalar, P: ParametricNlp<T>>(
    problem: &P,
    nominal: &PrimalDualPoint<T>,
    d: &DVector<T>,
    solver: &SolverConfig<T>,
) -> Result<(DVector<T>, SolveReport<T>), PolicyError> {
    let disturbed = problem.with_disturbance(d);
    let report =
        solve(&disturbed, solver, Some(nominal)).map_err(|source| PolicyError::Solver {
            stage: "disturbed",
            source,
        })?;
    let a = report.point.y.rows(0, problem.n_d()).into_owned();
    Ok((a, report))
}

/// Safe exploratory action at the state encoded in `problem` (built with
/// `d = 0`). The NLP is solved twice: once for `π` and the statistics, once
/// with a sampled `d`.
pub fn explore_action<T: Scalar, P: ParametricNlp<T>, R: Rng + ?Sized>(
    problem: &P,
    state: &DVector<T>,
    config: &ExplorationConfig<T>,
    warm_start: Option<&PrimalDualPoint<T>>,
    rng: &mut R,
) -> Result<Exploration<T>, PolicyError> {
    let (pi, nominal) = deterministic_action(problem, &config.solver, warm_start)?;
    let (stats, _) = exploration_stats(problem, &nominal.point, config)?;
    let mut retried = false;
    let mut d = config.sample_disturbance(rng)?;
    let (a, disturbed) = match disturbed_action(problem, &nominal.point, &d, &config.solver) {
        Ok(out) => out,
        Err(_) => {
            retried = true;
            d = config.sample_disturbance(rng)?;
            disturbed_action(problem, &nominal.point, &d, &config.solver)?
        }
    };
    let record = ExplorationRecord {
        s: state.clone(),
        e: &a - &pi,
        a: a.clone(),
        pi,
        nabla_theta_pi: stats.nabla_theta_pi,
        m: stats.m,
        c: stats.c,
    };
    Ok(Exploration {
        action: a,
        record,
        disturbance: d,
        nominal: nominal.point,
        disturbed: disturbed.point,
        iterations: (nominal.iterations, disturbed.iterations),
        retried,
    })
}

/// Range-space test of `∂g/∂θ` against the explored directions.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeReport {
    /// `‖(I − UUᵀ) ∂g/∂θ_p‖` per parameter, `U` spanning the kept range.
    pub residuals: Vec<f64>,
    /// Column norms of `∂g/∂θ`.
    pub column_norms: Vec<f64>,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
}

pub fn range_diagnostic<T: Scalar>(
    bundle: &SensitivityBundle<T>,
    config: &ExplorationConfig<T>,
) -> RangeReport {
    let floor = match config.m_mode {
        MMode::PseudoInverse { floor } => floor,
        MMode::PlainInverse => DEFAULT_PINV_FLOOR,
    };
    let cov = exploration_covariance(&bundle.dg_dd, &config.shape);
    let eig = cov.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(T::zero(), |m, &v| m.max(v));
    let cut = lit::<T>(floor) * max_eig;
    let kept: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > cut && eig.eigenvalues[i] > T::zero())
        .collect();
    let n_a = bundle.n_a();
    let mut proj = DMatrix::<T>::identity(n_a, n_a);
    for &i in &kept {
        let u = eig.eigenvectors.column(i);
        proj -= u * u.transpose();
    }
    let res = &proj * &bundle.dg_dtheta;
    RangeReport {
        residuals: res.column_iter().map(|c| to_f64(c.norm())).collect(),
        column_norms: bundle
            .dg_dtheta
            .column_iter()
            .map(|c| to_f64(c.norm()))
            .collect(),
        rank: kept.len(),
        eigenvalues: eig.eigenvalues.iter().map(|&v| to_f64(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{DiscProblem, UnconstrainedQuadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(tau: f64) -> ExplorationConfig<f64> {
        ExplorationConfig::new(1e-3, DMatrix::identity(2, 2), tau)
    }

    #[test]
    fn symmetric_disc_statistics() {
        let cfg = config(1e-2);
        let p = DiscProblem::<f64>::new([0.0, 0.0, 1.0]);
        let (_, rep) = deterministic_action(&p, &cfg.solver, None).unwrap();
        let (stats, _) = exploration_stats(&p, &rep.point, &cfg).unwrap();
        let mu = rep.point.mu[0];
        assert!((mu - 0.01).abs() < 1e-10);
        let expect = (1.0 + 2.0 * mu).powi(2);
        assert!((&stats.m - DMatrix::identity(2, 2) * expect).amax() < 1e-9);
        assert!(stats.c.amax() < 1e-14);
    }

    #[test]
    fn unconstrained_statistics_are_trivial() {
        let cfg = config(1e-2);
        let p = UnconstrainedQuadratic::<f64>::new(DVector::from_vec(vec![3.0, -1.0]));
        let (_, rep) = deterministic_action(&p, &cfg.solver, None).unwrap();
        let (stats, _) = exploration_stats(&p, &rep.point, &cfg).unwrap();
        assert!((&stats.m - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert_eq!(stats.c, DVector::zeros(2));
    }

    #[test]
    fn zero_disturbance_reproduces_policy() {
        let cfg = config(1e-2);
        let p = DiscProblem::<f64>::new([1.2, 0.0, 1.0]);
        let (pi, rep) = deterministic_action(&p, &cfg.solver, None).unwrap();
        let (a, _) = disturbed_action(&p, &rep.point, &DVector::zeros(2), &cfg.solver).unwrap();
        assert_eq!(a, pi);
    }

    #[test]
    fn record_roundtrip() {
        let cfg = config(1e-2);
        let p = DiscProblem::<f64>::new([1.2, 0.3, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ex = explore_action(&p, &DVector::zeros(2), &cfg, None, &mut rng).unwrap();
        let json = serde_json::to_string(&ex.record).unwrap();
        let back: ExplorationRecord<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ex.record);
        assert!((&back.a - &back.pi - &back.e).amax() <= 1e-12);
    }

    #[test]
    fn plain_inverse_rejects_collapsed_covariance() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            inverse_covariance(&cov, MMode::PlainInverse),
            Err(PolicyError::SingularCovariance { .. })
        ));
        let pinv = inverse_covariance(&cov, MMode::default()).unwrap();
        assert_eq!(
            pinv,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))
        );
    }
}
