//! Response-time regulation for an admission-controlled worker pool.
//!
//! A discrete-event simulator of a web-server worker pool whose size
//! (`max_requests`, Apache's MaxClients) is retuned every measurement
//! interval by a proportional or a fuzzy controller. The crate also carries
//! the first-order ARX identification and stability tools used to design the
//! proportional gain, and the experiment harness behind the `autotune` CLI.

pub mod controllers;
pub mod harness;
pub mod plant;
pub mod sim_engine;
pub mod sysid;

pub use controllers::{
    Controller, FixedController, FuzzyConfig, FuzzyController, PConfig, ProportionalController,
};
pub use harness::{ExperimentConfig, RunReport};
pub use plant::{ArxPlant, IntervalSample, PlantState, WorkerPool, WorkloadConfig};
pub use sim_engine::{EventCalendar, RngStream, SimEvent, SimTime};
pub use sysid::{ArxModel, StabilityReport};

/// Invalid parameters, rejected before any simulation work starts.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}
