//! Diffusion path planning toolkit.
//!
//! The crate covers the full pipeline: procedural maze maps and A* expert
//! trajectories ([`maze`], [`planner`], [`dataset`]), denoising-diffusion
//! machinery ([`diffusion`]), a FiLM-conditioned temporal convolutional
//! noise predictor with a residual visual encoder ([`nn`], [`model`]),
//! training ([`training`]), inference ([`inference`]), and the evaluation
//! and benchmarking harness ([`eval`]).

pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod maze;
pub mod nn;
pub mod planner;
pub mod traj;

pub use error::{Error, Result};
