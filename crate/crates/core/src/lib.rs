//! Goal-conditioned reinforcement learning for beamline alignment.
//!
//! A DDPG agent with an action-attentive actor learns to drive a simulated
//! beamline's output beam (centre and semi-axes) to arbitrary target states.
//! Evolutionary and Bayesian black-box optimizers provide baselines under the
//! same per-evaluation budget, and [`eval`] implements the coverage / avg(k)
//! protocol.

pub mod agent;
pub mod baselines;
pub mod cli;
pub mod env;
pub mod eval;
pub mod numerics;
pub mod par;
pub mod replay;
