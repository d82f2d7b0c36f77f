//! Multi-agent policy-gradient laboratory: social-dilemma environments,
//! status-quo policy gradients, the GameDistill reduction from grid games to
//! matrix meta-games, metrics, and an experiment harness.

pub mod distill;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
pub use par::Execution;
