//! Offline preference-based reinforcement learning on finite episodic MDPs,
//! cast as an adversarial game between a policy and a value/reward model.
//!
//! The crate provides exact tabular dynamic programming, seeded dataset
//! generation, maximum-likelihood estimators, the two adversarial solvers
//! (`run_appo` and `run_appo_rollout`), and brute-force oracles used to check
//! their identities and bounds.

pub mod appo;
pub mod datagen;
pub mod estimators;
pub mod error;
pub mod mdp;
pub mod oracle;
pub mod rng;
mod serde_float;

pub use error::{Error, Result};
pub use mdp::{
    Dims, EpisodicMdp, RewardModel, TabularPolicy, Trajectory, TransitionKernel, ValueTable,
    VisitationDistributions,
};
