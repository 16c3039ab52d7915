//! Tactile surface-following with offline deep Q-learning.
//!
//! The crate is organised along the experiment pipeline:
//!
//! * [`tactile_image`]: frame preprocessing and the ContactRate measure.
//! * [`sim_world`]: the simulated arm, surface and sensor.
//! * [`rl_core`]: actions, reward and action-effect classes.
//! * [`behavior_policy`]: dataset generation and persistence.
//! * [`qnet`]: the convolutional Q-network, written from scratch.
//! * [`trainer`]: offline deep Q-learning over a stored dataset.
//! * [`eval_harness`]: precision, learning curves and rollouts.

pub mod behavior_policy;
pub mod error;
pub mod eval_harness;
pub mod qnet;
pub mod rl_core;
pub mod sim_world;
pub mod tactile_image;
pub mod trainer;

pub use error::{Error, Result};
