//! Deterministic discrete-event simulation: scenarios, fault injection, the tick
//! loop, the event log and metrics.

pub mod engine;
pub mod events;
pub mod faults;
pub mod metrics;
pub mod scenario;

pub use engine::{run, run_with, RunError, RunOptions, RunOutput};
pub use events::{read_jsonl, to_jsonl, write_jsonl, EventKind, EventLog, LogError, PriorityClass, SimEvent, TransitionCause};
pub use faults::{inject, FaultClass, FaultSpec};
pub use metrics::{compute_metrics, metrics_json, render_summary, Detection, MetricsError, MetricsReport, SwapCounts};
pub use scenario::{parse_scenario, Scenario, ScenarioError, ValidationIssue};
