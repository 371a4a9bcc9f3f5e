//! Action-free offline pretraining for online reinforcement learning.
//!
//! A return-conditioned transformer is pretrained on trajectories that carry
//! only states and rewards. During online training it plans the next state,
//! and a soft actor-critic agent is steered toward that plan through a
//! separate zero-discount critic fed by a guiding reward.

pub mod afdt;
pub mod dataset;
pub mod envs;
pub mod guided_sac;
pub mod harness;
pub mod nn;
pub mod rng;
