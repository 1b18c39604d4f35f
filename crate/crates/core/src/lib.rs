//! Safe deterministic policy-gradient learning for robust linear MPC policies.
//!
//! The policy is the first input of a scenario-tree MPC solved through a
//! relaxed primal-dual interior-point system. Solution sensitivities give the
//! policy Jacobian and the exploration statistics, an LSTD critic estimates
//! the gradient, and a constrained update keeps the model consistent with all
//! observed transitions.

pub mod critic;
pub mod harness;
pub mod learner;
pub mod mpc;
pub mod nlp;
pub mod plant;
pub mod policy;
pub mod scalar;
pub mod sensitivity;
pub mod toy;

pub use scalar::Scalar;

/// Double-precision aliases.
pub type Theta = mpc::ThetaParams<f64>;
pub type Polytope = mpc::PolytopeW<f64>;
pub type Batch = plant::TransitionBatch<f64>;
pub type Record = policy::ExplorationRecord<f64>;
pub type Plant = plant::PlantModel<f64>;
pub type Solver = nlp::SolverConfig<f64>;
pub type Exploration = policy::ExplorationConfig<f64>;
pub type Update = learner::UpdateConfig<f64>;
