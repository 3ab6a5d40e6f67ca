//! Discrete-event simulation of unslotted IEEE 802.15.4 CSMA/CA nodes under
//! metric-driven parent selection, with online link estimation.

pub mod config;
mod engine;
pub mod error;
pub mod estimators;
pub mod report;
pub mod trace;

pub use config::{ArrivalProcess, ScriptedInterferer, SimConfig};
pub use error::{Result, SimError};
pub use report::{
    estimator_quality, mean_ci95, run_replications, run_simulation, run_stream, samples_by_link,
    EstimatorQuality, NodeReport, NodeSummary, ReplicationSummary, SimReport,
};
pub use trace::SimTrace;
