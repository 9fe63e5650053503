//! Run metrics, recomputed from the event log and the scenario alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::{EventKind, SimEvent};
use super::faults::FaultClass;
use super::scenario::Scenario;
use crate::confidence::SwapReason;
use crate::ids::{ComponentRef, FunctionId, ReplicaId};
use crate::model::{LifecycleEvent, LifecycleState, Topology};
use crate::swapexec::TestOutcome;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCounts {
    pub fault: u64,
    pub efficiency: u64,
    pub total: u64,
}

/// When the first persistent finding on a fault's footprint appeared.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub fault: usize,
    pub class: FaultClass,
    pub onset: u64,
    pub detected_at: Option<u64>,
    pub latency: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    /// Ticks actually simulated; short of the configured length only for partial logs.
    pub ticks: u64,
    pub partial: bool,
    /// Fraction of ticks on which the function had an ACTIVE certified replica.
    pub availability: BTreeMap<FunctionId, f64>,
    /// Longest run of consecutive ticks without an ACTIVE certified replica.
    pub max_gap_ticks: BTreeMap<FunctionId, u64>,
    pub swap_count: SwapCounts,
    pub stale_commands: u64,
    pub mean_detection_latency: Option<f64>,
    pub detections: Vec<Detection>,
    /// Fault swaps whose demoted replica had no injected fault on it or its hosts recently.
    pub false_swap_count: u64,
    pub deadline_miss_count: u64,
    pub degraded_mode_ticks: u64,
    pub findings: u64,
    pub persistent_findings: u64,
    pub heals_started: u64,
    pub tests_passed: u64,
    pub tests_failed: u64,
    pub final_states: BTreeMap<ReplicaId, LifecycleState>,
    pub retired: Vec<ReplicaId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("event log does not start with run_started")]
    MissingRunStarted,
    #[error("event {seq}: replica {replica} is unknown to the scenario")]
    UnknownReplica { seq: u64, replica: ReplicaId },
    #[error("event {seq}: replica {replica} is {actual} but the log says it was {logged}")]
    StateMismatch {
        seq: u64,
        replica: ReplicaId,
        actual: LifecycleState,
        logged: LifecycleState,
    },
}

/// Components whose misbehavior a fault on `targets` explains: the targets plus every
/// replica hosted on a targeted platform.
fn footprint(targets: &[ComponentRef], topology: &Topology) -> BTreeSet<ComponentRef> {
    let mut out: BTreeSet<ComponentRef> = targets.iter().cloned().collect();
    for r in &topology.replicas {
        let chain = topology.component_chain(&r.id);
        if chain.iter().any(|c| targets.contains(c)) {
            out.insert(ComponentRef::Replica(r.id.clone()));
        }
    }
    out
}

pub fn compute_metrics(events: &[SimEvent], scenario: &Scenario) -> Result<MetricsReport, MetricsError> {
    let Some(SimEvent {
        event: EventKind::RunStarted { scenario: name, seed, ticks },
        ..
    }) = events.first()
    else {
        return Err(MetricsError::MissingRunStarted);
    };
    let violation_tick = events.iter().find_map(|e| match e.event {
        EventKind::ProtocolViolation { .. } => Some(e.tick),
        _ => None,
    });
    let finished = events.iter().any(|e| matches!(e.event, EventKind::RunFinished { .. }));
    let partial = violation_tick.is_some() || !finished;
    let simulated = match (violation_tick, partial) {
        (Some(t), _) => t + 1,
        (None, true) => events.last().map_or(0, |e| e.tick + 1),
        (None, false) => *ticks,
    };

    let topology = scenario.build_topology();
    let mut state: BTreeMap<ReplicaId, (LifecycleState, bool)> =
        topology.replicas.iter().map(|r| (r.id.clone(), (r.state, r.certified))).collect();
    let functions: Vec<FunctionId> = topology.functions.iter().map(|f| f.id.clone()).collect();
    let members: BTreeMap<&FunctionId, Vec<&ReplicaId>> = functions
        .iter()
        .map(|f| (f, topology.peers(f).map(|r| &r.id).collect()))
        .collect();

    let mut up: BTreeMap<&FunctionId, u64> = functions.iter().map(|f| (f, 0)).collect();
    let mut gap: BTreeMap<&FunctionId, (u64, u64)> = functions.iter().map(|f| (f, (0, 0))).collect();
    let mut next = 0usize;
    for tick in 0..simulated {
        while next < events.len() && events[next].tick == tick {
            let e = &events[next];
            next += 1;
            if let EventKind::Lifecycle { transition, .. } = &e.event {
                let entry = state.get_mut(&transition.replica).ok_or_else(|| MetricsError::UnknownReplica {
                    seq: e.seq,
                    replica: transition.replica.clone(),
                })?;
                if entry.0 != transition.from {
                    return Err(MetricsError::StateMismatch {
                        seq: e.seq,
                        replica: transition.replica.clone(),
                        actual: entry.0,
                        logged: transition.from,
                    });
                }
                entry.0 = transition.to;
                match transition.event {
                    LifecycleEvent::BlacklistConfirmed => entry.1 = false,
                    LifecycleEvent::TestPassed => entry.1 = true,
                    _ => {}
                }
            }
        }
        for f in &functions {
            let ok = members[f].iter().any(|r| state[*r] == (LifecycleState::Active, true));
            let g = gap.get_mut(f).expect("every function tracked");
            if ok {
                *up.get_mut(f).expect("every function tracked") += 1;
                g.0 = 0;
            } else {
                g.0 += 1;
                g.1 = g.1.max(g.0);
            }
        }
    }

    let availability = up
        .iter()
        .map(|(f, n)| {
            let a = if simulated == 0 { 0.0 } else { *n as f64 / simulated as f64 };
            ((*f).clone(), a)
        })
        .collect();
    let max_gap_ticks = gap.iter().map(|(f, g)| ((*f).clone(), g.1)).collect();

    let w = scenario.detector.window;
    let lookback = w * (u64::from(scenario.detector.persistence) + 1);
    let mut swap_count = SwapCounts::default();
    let mut false_swap_count = 0;
    let mut stale_commands = 0;
    let mut deadline_miss_count = 0;
    let mut degraded_rounds = 0;
    let mut findings = 0;
    let mut persistent_findings = 0;
    let mut heals_started = 0;
    let mut tests_passed = 0;
    let mut tests_failed = 0;
    let mut first_persistent: Vec<(u64, &ComponentRef)> = Vec::new();
    for e in events {
        match &e.event {
            EventKind::SwapStarted { execution } => {
                swap_count.total += 1;
                match execution.command.reason() {
                    SwapReason::Fault => swap_count.fault += 1,
                    SwapReason::Efficiency => swap_count.efficiency += 1,
                }
                if let Some(d) = execution.command.demote.as_ref().filter(|d| d.reason == SwapReason::Fault) {
                    let chain = topology.component_chain(&d.replica);
                    let from = execution.start.saturating_sub(lookback);
                    let explained = scenario
                        .faults
                        .iter()
                        .any(|f| f.overlaps(from, execution.start) && f.targets.iter().any(|t| chain.contains(t)));
                    if !explained {
                        false_swap_count += 1;
                    }
                }
            }
            EventKind::StaleCommand { .. } => stale_commands += 1,
            EventKind::DeadlineMisses { count, .. } => deadline_miss_count += count,
            EventKind::DegradedMode { .. } => degraded_rounds += 1,
            EventKind::Assessment { assessment } => {
                findings += assessment.findings.len() as u64;
                let persistent = assessment.findings.iter().filter(|f| f.persistent).count() as u64;
                persistent_findings += persistent;
                if persistent > 0 {
                    first_persistent.push((e.tick, &assessment.target));
                }
            }
            EventKind::HealScheduled { .. } => heals_started += 1,
            EventKind::TestResolved { outcome, .. } => match outcome {
                TestOutcome::Pass => tests_passed += 1,
                TestOutcome::Fail => tests_failed += 1,
            },
            _ => {}
        }
    }

    let detections: Vec<Detection> = scenario
        .faults
        .iter()
        .enumerate()
        .filter(|(_, f)| f.onset < simulated)
        .map(|(i, f)| {
            let area = footprint(&f.targets, &topology);
            let detected_at = first_persistent
                .iter()
                .find(|(tick, target)| *tick >= f.onset && area.contains(*target))
                .map(|(tick, _)| *tick);
            Detection {
                fault: i,
                class: f.class,
                onset: f.onset,
                detected_at,
                latency: detected_at.map(|t| t - f.onset),
            }
        })
        .collect();
    let latencies: Vec<u64> = detections.iter().filter_map(|d| d.latency).collect();
    let mean_detection_latency = if latencies.is_empty() {
        None
    } else {
        Some(latencies.iter().sum::<u64>() as f64 / latencies.len() as f64)
    };

    let final_states: BTreeMap<ReplicaId, LifecycleState> = state.iter().map(|(id, (s, _))| (id.clone(), *s)).collect();
    let retired = final_states
        .iter()
        .filter(|(_, s)| **s == LifecycleState::Retired)
        .map(|(id, _)| id.clone())
        .collect();

    Ok(MetricsReport {
        scenario: name.clone(),
        seed: *seed,
        ticks: simulated,
        partial,
        availability,
        max_gap_ticks,
        swap_count,
        stale_commands,
        mean_detection_latency,
        detections,
        false_swap_count,
        deadline_miss_count,
        degraded_mode_ticks: degraded_rounds * w,
        findings,
        persistent_findings,
        heals_started,
        tests_passed,
        tests_failed,
        final_states,
        retired,
    })
}

/// Canonical JSON form of a report, as written to `metrics.json`.
pub fn metrics_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Short human-readable report.
pub fn render_summary(report: &MetricsReport) -> String {
    let mut s = String::new();
    let status = if report.partial { " (PARTIAL: protocol violation)" } else { "" };
    let _ = writeln!(s, "scenario {} seed {} ticks {}{status}", report.scenario, report.seed, report.ticks);
    for (f, a) in &report.availability {
        let _ = writeln!(s, "  availability {f}: {:.6} (longest gap {} ticks)", a, report.max_gap_ticks[f]);
    }
    let c = report.swap_count;
    let _ = writeln!(s, "  swaps: {} total, {} fault, {} efficiency, {} stale", c.total, c.fault, c.efficiency, report.stale_commands);
    match report.mean_detection_latency {
        Some(l) => {
            let _ = writeln!(s, "  mean detection latency: {l:.1} ticks");
        }
        None => {
            let _ = writeln!(s, "  mean detection latency: n/a");
        }
    }
    let _ = writeln!(s, "  false swaps: {}", report.false_swap_count);
    let _ = writeln!(s, "  deadline misses: {}", report.deadline_miss_count);
    let _ = writeln!(s, "  degraded-mode ticks: {}", report.degraded_mode_ticks);
    let _ = writeln!(s, "  findings: {} ({} persistent)", report.findings, report.persistent_findings);
    let _ = writeln!(
        s,
        "  heals: {} started, {} passed, {} failed",
        report.heals_started, report.tests_passed, report.tests_failed
    );
    let states: Vec<String> = report.final_states.iter().map(|(r, st)| format!("{r}={st}")).collect();
    let _ = writeln!(s, "  final states: {}", states.join(" "));
    s
}
