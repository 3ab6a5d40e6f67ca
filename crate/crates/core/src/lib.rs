//! Analytical model of IEEE 802.15.4 unslotted CSMA/CA links under RPL-style
//! routing: per-link reliability, delay and energy, MAC-aware parent
//! selection, the network-wide flow balance and a constrained parameter
//! selector.

pub mod error;
pub mod interference;
pub mod mac;
pub mod metrics;
pub mod selector;
pub mod solver;
pub mod topology;

pub use error::{Error, Result};
pub use interference::InterferenceMap;
pub use mac::{LinkState, MacParams, PowerProfile, Timing};
pub use metrics::{MetricKind, MetricRegistry, ParentSelector, SelectionMatrix};
pub use solver::{solve_network, solve_network_with, NetworkSolution, SolverOptions};
pub use topology::{build_dodag, load_topology, load_topology_file, Dodag, Topology};
