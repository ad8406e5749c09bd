//! Experiment drivers, configuration files and result files.

pub mod config;
mod experiments;
pub mod output;
mod roa;
pub mod verify;

pub use config::{BuiltPlant, ExperimentConfig, ExperimentKind, SystemSpec, SCHEMA_VERSION};
pub use experiments::*;
pub use roa::{estimate_roa, radius_grid, RoaResult};
