//! Synthetic microservice telemetry: Poisson request arrivals over a call
//! topology, lognormal latencies, templated logs, 16-dimensional pod metrics
//! and injected faults with labeled ground truth.

pub mod generator;
pub mod scenario;
pub mod topology;

pub use generator::{generate, single_fault_scenario, FaultCase, GenError, Generated, GroundTruth, METRIC_NAMES};
pub use scenario::{FaultKind, FaultSpec, Scenario, ScenarioError};
pub use topology::{CallNode, CallTemplate, Topology};
