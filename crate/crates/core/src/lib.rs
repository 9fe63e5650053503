//! Peer-replicated components kept available by box-typed probes, an integrity
//! module, a confidence module, hot swap, and a blacklist → heal → recertify
//! lifecycle, all driven by a deterministic discrete-event simulator.
//!
//! The statistical and health math is generic over [`Scalar`] (`f32` or `f64`).
//! The simulator itself runs on [`Real`]; the aliases below name the concrete
//! types it uses.
//!
//! ```
//! use hotswap_core::sim::{parse_scenario, run};
//!
//! let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/clean.json")).unwrap();
//! let scenario = parse_scenario(&text).unwrap().with_ticks(200);
//! let out = run(&scenario).unwrap();
//! assert_eq!(out.metrics.swap_count.total, 0);
//! ```

pub mod confidence;
pub mod ids;
pub mod integrity;
pub mod model;
pub mod probes;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod swapexec;

pub use scalar::Scalar;

/// Scalar type used by the simulator.
pub type Real = f64;

pub type Topology = model::Topology<Real>;
pub type Replica = model::Replica<Real>;
pub type FunctionRole = model::FunctionRole<Real>;
pub type Probe = probes::Probe<Real>;
pub type TelemetryRecord = probes::TelemetryRecord<Real>;
pub type ComponentTruth = probes::ComponentTruth<Real>;
pub type AnomalyFinding = integrity::AnomalyFinding<Real>;
pub type HealthAssessment = integrity::HealthAssessment<Real>;
pub type IntegrityConfig = integrity::IntegrityConfig<Real>;
pub type FaultSpec = sim::FaultSpec<Real>;
