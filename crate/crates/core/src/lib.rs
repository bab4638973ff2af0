//! Simulator for data-quality based client scheduling in federated edge
//! learning.
//!
//! A cell of UEs holds non-IID, possibly label-flipped data. Each round the
//! server scores every UE by reputation and dataset diversity, picks UEs and
//! bandwidth shares that meet the round deadline, trains a small MLP with
//! FedAvg and records per-round metrics.

pub mod channel;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod quality;
pub mod rng;
pub mod scheduler;

pub use config::{load_config, SimulationConfig};
pub use error::{Error, Result};
pub use rng::{derive_stream, RngStream};
pub use engine::{run_seeds, run_simulation, RoundRecord, Simulation, UeProfile};
pub use learner::ModelParams;
pub use scheduler::{exact_schedule, greedy_schedule, ScheduleDecision, SchedulingInstance};
