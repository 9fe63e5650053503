//! The append-only event log.
//!
//! Events are totally ordered by `(tick, class, seq)`. `seq` is a global counter,
//! so it alone already orders the log; `class` records which phase of the tick
//! produced the event.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::faults::FaultClass;
use crate::confidence::{DegradedReason, SwapCommand, SwapReason};
use crate::ids::{ComponentRef, FunctionId, ProbeId, ReplicaId};
use crate::integrity::{HealthAssessment, TrustStatus};
use crate::model::Transition;
use crate::swapexec::{HealingJob, SwapExecution, TestOutcome};

/// Phase of a tick. Within one tick events of a lower class come first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityClass {
    Fault,
    Sampling,
    Integrity,
    Confidence,
    Swap,
    Lifecycle,
}

/// Why a lifecycle transition happened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Swap,
    Assessment,
    Heal,
    PlatformEviction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    RunStarted {
        scenario: String,
        seed: u64,
        ticks: u64,
    },
    FaultActivated {
        fault: usize,
        class: FaultClass,
        targets: Vec<ComponentRef>,
    },
    FaultEnded {
        fault: usize,
    },
    /// Healing removed the fault's effect on one replica.
    FaultCleared {
        fault: usize,
        replica: ReplicaId,
    },
    ProbeDetached {
        probe: ProbeId,
        target: ComponentRef,
    },
    /// Ticks since the previous window on which the ACTIVE replica missed its deadline.
    DeadlineMisses {
        function: FunctionId,
        count: u64,
    },
    TrustChanged {
        target: ComponentRef,
        probe: ProbeId,
        from: TrustStatus,
        to: TrustStatus,
    },
    Assessment {
        assessment: HealthAssessment<f64>,
    },
    SwapIssued {
        command: SwapCommand,
    },
    DegradedMode {
        function: FunctionId,
        reason: DegradedReason,
    },
    UnknownHealth {
        function: FunctionId,
        replica: ReplicaId,
    },
    SwapStarted {
        execution: SwapExecution,
    },
    SwapCompleted {
        function: FunctionId,
        promoted: ReplicaId,
        reason: SwapReason,
    },
    StaleCommand {
        function: FunctionId,
        promote: ReplicaId,
        reason: String,
    },
    Lifecycle {
        transition: Transition,
        cause: TransitionCause,
    },
    PlatformBlacklisted {
        platform: ComponentRef,
        replicas: Vec<ReplicaId>,
    },
    HealScheduled {
        job: HealingJob,
    },
    RebootComplete {
        replica: ReplicaId,
        attempt: u32,
    },
    TestResolved {
        replica: ReplicaId,
        attempt: u32,
        outcome: TestOutcome,
    },
    ProtocolViolation {
        message: String,
    },
    RunFinished {
        ticks: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub class: PriorityClass,
    pub seq: u64,
    pub event: EventKind,
}

impl SimEvent {
    pub fn key(&self) -> (u64, PriorityClass, u64) {
        (self.tick, self.class, self.seq)
    }
}

/// Append-only sequence of events with a running sequence counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    events: Vec<SimEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event. Panics if it would break the total order, which is an engine bug.
    pub fn push(&mut self, tick: u64, class: PriorityClass, event: EventKind) {
        let seq = self.events.len() as u64;
        let e = SimEvent { tick, class, seq, event };
        if let Some(last) = self.events.last() {
            assert!(last.key() < e.key(), "event order broken: {:?} then {:?}", last.key(), e.key());
        }
        self.events.push(e);
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<SimEvent> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn write_jsonl<W: Write>(events: &[SimEvent], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_jsonl(events: &[SimEvent]) -> String {
    let mut buf = Vec::new();
    write_jsonl(events, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SimEvent>, LogError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
        events.push(e);
    }
    Ok(events)
}
