//! Stabilizing unknown linear systems with model-free policy gradient and an
//! adaptively annealed discount factor.

pub mod annealing;
pub mod control;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
