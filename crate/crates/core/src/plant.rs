//! The real system, the baseline stage cost and closed-loop batch rollouts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mpc::{symmetric_rotation, CondensedMpc, MpcDims, MpcError, ThetaParams};
use crate::policy::{explore_action, ExplorationConfig, ExplorationRecord, PolicyError};
use crate::scalar::{lit, to_f64, Scalar};

#[derive(Debug, Clone, Error)]
pub enum PlantError {
    #[error("rollout {rollout}, time {time}: {source}")]
    Policy {
        rollout: usize,
        time: usize,
        state: Vec<f64>,
        #[source]
        source: PolicyError,
    },
    #[error("rollout {rollout}, time {time}: {source}")]
    Mpc {
        rollout: usize,
        time: usize,
        #[source]
        source: MpcError,
    },
}

/// `s⁺ = A s + B a + n`, `n ~ N(0, noise_cov)` clipped to a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel<T: Scalar> {
    pub a_real: DMatrix<T>,
    pub b_real: DMatrix<T>,
    pub noise_cov: DMatrix<T>,
    pub clip_radius: T,
}

impl<T: Scalar> PlantModel<T> {
    /// `A = κ [[cos β, sin β], [sin β, cos β]]`, `B = diag(1.1, 0.9)`.
    pub fn example(kappa: T, beta: T, noise_cov: DMatrix<T>, clip_radius: T) -> Self {
        Self {
            a_real: symmetric_rotation(beta) * kappa,
            b_real: DMatrix::from_diagonal(&DVector::from_vec(vec![lit(1.1), lit(0.9)])),
            noise_cov,
            clip_radius,
        }
    }

    fn noise_factor(&self) -> DMatrix<T> {
        let eig = self.noise_cov.clone().symmetric_eigen();
        let root = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&root)
    }

    /// Clipped process noise.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let xi = DVector::from_fn(self.noise_cov.nrows(), |_, _| {
            lit::<T>(rng.sample::<f64, _>(StandardNormal))
        });
        clip_to_ball(self.noise_factor() * xi, self.clip_radius)
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &DVector<T>, a: &DVector<T>, rng: &mut R) -> DVector<T> {
        self.deterministic_step(s, a) + self.sample_noise(rng)
    }

    pub fn deterministic_step(&self, s: &DVector<T>, a: &DVector<T>) -> DVector<T> {
        &self.a_real * s + &self.b_real * a
    }
}

pub fn clip_to_ball<T: Scalar>(n: DVector<T>, radius: T) -> DVector<T> {
    let norm = n.norm();
    if norm > radius {
        n * (radius / norm)
    } else {
        n
    }
}

/// `L = ‖s − x_ref‖²/20 + ‖a − u_ref‖²/2`.
pub fn stage_cost<T: Scalar>(
    s: &DVector<T>,
    a: &DVector<T>,
    x_ref: &DVector<T>,
    u_ref: &DVector<T>,
) -> T {
    (s - x_ref).norm_squared() / lit::<T>(20.0) + (a - u_ref).norm_squared() * lit::<T>(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: DeserializeOwned"))]
pub struct Transition<T: Scalar> {
    pub s: DVector<T>,
    pub a: DVector<T>,
    pub cost: T,
    pub s_plus: DVector<T>,
    pub record: ExplorationRecord<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: DeserializeOwned"))]
pub struct TransitionBatch<T: Scalar> {
    pub rollouts: Vec<Vec<Transition<T>>>,
    pub seed: u64,
    pub step: u64,
}

impl<T: Scalar> TransitionBatch<T> {
    pub fn transitions(&self) -> impl Iterator<Item = &Transition<T>> {
        self.rollouts.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.rollouts.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest `‖s‖` over all visited states, successors included.
    pub fn max_state_norm(&self) -> T {
        self.transitions()
            .fold(T::zero(), |m, t| m.max(t.s.norm()).max(t.s_plus.norm()))
    }
}

/// Closed-loop rollout settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig<T: Scalar> {
    pub dims: MpcDims,
    pub exploration: ExplorationConfig<T>,
    pub s0: DVector<T>,
    pub x_ref: DVector<T>,
    pub u_ref: DVector<T>,
    /// `S`.
    pub rollouts: usize,
    /// `N_t`.
    pub steps: usize,
}

/// Random stream for one `(seed, RL step, rollout, time)` cell.
pub fn stream(seed: u64, step: u64, rollout: u64, time: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, step, rollout, time]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Runs one rollout of `config.steps` transitions from `config.s0`.
pub fn rollout<T: Scalar>(
    plant: &PlantModel<T>,
    theta: &ThetaParams<T>,
    config: &RolloutConfig<T>,
    seed: u64,
    step: u64,
    index: usize,
) -> Result<Vec<Transition<T>>, PlantError> {
    let mut s = config.s0.clone();
    let mut out = Vec::with_capacity(config.steps);
    for time in 0..config.steps {
        let mut rng = stream(seed, step, index as u64, time as u64);
        let mpc = CondensedMpc::new(theta, &s, config.dims).map_err(|source| PlantError::Mpc {
            rollout: index,
            time,
            source,
        })?;
        let ex =
            explore_action(&mpc, &s, &config.exploration, None, &mut rng).map_err(|source| {
                PlantError::Policy {
                    rollout: index,
                    time,
                    state: s.iter().map(|&x| to_f64(x)).collect(),
                    source,
                }
            })?;
        let s_plus = plant.step(&s, &ex.action, &mut rng);
        out.push(Transition {
            cost: stage_cost(&s, &ex.action, &config.x_ref, &config.u_ref),
            s: s.clone(),
            a: ex.action,
            s_plus: s_plus.clone(),
            record: ex.record,
        });
        s = s_plus;
    }
    Ok(out)
}

/// `S` independent rollouts; fails if any rollout fails.
pub fn rollout_batch<T: Scalar>(
    plant: &PlantModel<T>,
    theta: &ThetaParams<T>,
    config: &RolloutConfig<T>,
    seed: u64,
    step: u64,
) -> Result<TransitionBatch<T>, PlantError> {
    let rollouts = (0..config.rollouts)
        .map(|i| rollout(plant, theta, config, seed, step, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransitionBatch {
        rollouts,
        seed,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_is_exact() {
        let n = clip_to_ball(DVector::<f64>::from_vec(vec![0.03, 0.04]), 0.005);
        assert!((n.norm() - 0.005).abs() < 1e-16);
        let small = DVector::from_vec(vec![0.001, 0.0]);
        assert_eq!(clip_to_ball(small.clone(), 0.005), small);
    }

    #[test]
    fn zero_noise_at_origin() {
        let p = PlantModel::<f64>::example(0.95, 22f64.to_radians(), DMatrix::zeros(2, 2), 0.005);
        let mut rng = stream(1, 0, 0, 0);
        let s = p.step(&DVector::zeros(2), &DVector::zeros(2), &mut rng);
        assert_eq!(s, DVector::zeros(2));
    }

    #[test]
    fn stage_cost_values() {
        let x = DVector::<f64>::from_vec(vec![0.5, 0.5]);
        let u = DVector::from_vec(vec![0.1, -0.2]);
        assert_eq!(stage_cost(&x, &u, &x, &u), 0.0);
        let s = &x + DVector::from_vec(vec![0.6, 0.8]);
        assert!((stage_cost(&s, &u, &x, &u) - 0.05).abs() < 1e-15);
        let a = &u + DVector::from_vec(vec![0.0, 2.0]);
        assert!((stage_cost(&x, &a, &x, &u) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn streams_differ_per_cell() {
        let a: f64 = stream(1, 2, 3, 4).sample(StandardNormal);
        let b: f64 = stream(1, 2, 3, 5).sample(StandardNormal);
        let c: f64 = stream(1, 2, 3, 4).sample(StandardNormal);
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
