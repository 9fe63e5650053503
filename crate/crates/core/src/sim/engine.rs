//! The tick loop.
//!
//! Every tick runs the same phases in a fixed order: fault bookkeeping, probe
//! sampling, then (on window boundaries only) integrity and confidence, then swap
//! execution and lifecycle bookkeeping. A window closes on tick `t` when
//! `(t + 1) % window == 0`.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use thiserror::Error;

use super::events::{EventKind, EventLog, PriorityClass, SimEvent, TransitionCause};
use super::metrics::{compute_metrics, MetricsReport};
use super::scenario::{Scenario, ScenarioError};
use crate::confidence::{self, Candidate, DecisionContext, DecisionNote, DegradedReason, Demotion, SwapCommand, SwapReason};
use crate::ids::{ComponentRef, FunctionId, HardwareId, ProbeId, ReplicaId, VmId};
use crate::integrity::{Health, HealthAssessment, Integrity, TrustStatus, WindowOutcome, WindowScope};
use crate::model::{LifecycleEvent, LifecycleState, Topology, Transition};
use crate::probes::{sample, substitute_glass, ComponentTruth, Probe, ProbeError, TelemetryRecord};
use crate::rng::{stream, StreamRng};
use crate::swapexec::{
    complete_swap, execute_swap, finish_reconfigure, record_test, resolve_test, schedule_heal, FaultTruth, HealError,
    HealingJob, SwapError, SwapExecution,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every telemetry record and window scope, for offline replay.
    pub record_telemetry: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub events: Vec<SimEvent>,
    pub metrics: MetricsReport,
    /// Integrity output for every window, in order.
    pub windows: Vec<WindowOutcome<f64>>,
    /// Empty unless telemetry recording was requested.
    pub telemetry: Vec<TelemetryRecord<f64>>,
    /// Scope of each window; empty unless telemetry recording was requested.
    pub scopes: Vec<WindowScope<f64>>,
    /// Probes as sampled, after any glass-box substitution.
    pub probes: Vec<Probe<f64>>,
    pub topology: Topology<f64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error("protocol violation at tick {tick}: {message}")]
    ProtocolViolation {
        tick: u64,
        message: String,
        partial: Box<RunOutput>,
    },
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, options: RunOptions) -> Result<RunOutput, RunError> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario, options);
    info!("running scenario {} seed {} for {} ticks", scenario.name, scenario.seed, scenario.ticks);
    let result = (0..scenario.ticks).try_for_each(|t| engine.tick(t));
    match result {
        Ok(()) => {
            let last = scenario.ticks - 1;
            engine.log.push(last, PriorityClass::Lifecycle, EventKind::RunFinished { ticks: scenario.ticks });
            Ok(engine.finish())
        }
        Err(Violation { tick, message }) => {
            engine.log.push(tick, PriorityClass::Lifecycle, EventKind::ProtocolViolation { message: message.clone() });
            Err(RunError::ProtocolViolation {
                tick,
                message,
                partial: Box::new(engine.finish()),
            })
        }
    }
}

struct Violation {
    tick: u64,
    message: String,
}

fn violation(tick: u64, message: impl ToString) -> Violation {
    Violation {
        tick,
        message: message.to_string(),
    }
}

struct Engine<'a> {
    sc: &'a Scenario,
    options: RunOptions,
    topo: Topology<f64>,
    integrity: Integrity<f64>,
    probes: Vec<Probe<f64>>,
    rngs: Vec<StreamRng>,
    detached: Vec<bool>,
    baselines: BTreeMap<ComponentRef, ComponentTruth<f64>>,
    log: EventLog,
    buffer: Vec<TelemetryRecord<f64>>,
    /// (fault index, replica): healing removed this fault's direct effect on the replica.
    cleared: BTreeSet<(usize, ReplicaId)>,
    streaks: BTreeMap<FunctionId, u32>,
    swaps: Vec<SwapExecution>,
    jobs: BTreeMap<ReplicaId, HealingJob>,
    blacklist_history: Vec<(u64, ReplicaId, VmId, HardwareId)>,
    trust: BTreeMap<(ComponentRef, ProbeId), TrustStatus>,
    misses: BTreeMap<FunctionId, u64>,
    last_assessments: Vec<HealthAssessment<f64>>,
    windows: Vec<WindowOutcome<f64>>,
    telemetry: Vec<TelemetryRecord<f64>>,
    scopes: Vec<WindowScope<f64>>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, options: RunOptions) -> Self {
        let topo = sc.build_topology();
        let probes = match &sc.glass_substitution {
            Some(g) => substitute_glass(&sc.probes, g.gray_fraction, &mut stream(sc.seed, "glass")),
            None => sc.probes.clone(),
        };
        let rngs = probes.iter().map(|p| stream(sc.seed, &format!("probe:{}", p.id))).collect();
        let mut baselines = BTreeMap::new();
        for h in &topo.hardware_platforms {
            let c = ComponentRef::Hardware(h.id.clone());
            baselines.insert(c.clone(), sc.baseline_truth(&c));
        }
        for v in &topo.vm_platforms {
            let c = ComponentRef::Vm(v.id.clone());
            baselines.insert(c.clone(), sc.baseline_truth(&c));
        }
        for r in &topo.replicas {
            let c = ComponentRef::Replica(r.id.clone());
            baselines.insert(c.clone(), sc.baseline_truth(&c));
        }
        let mut log = EventLog::new();
        log.push(
            0,
            PriorityClass::Fault,
            EventKind::RunStarted {
                scenario: sc.name.clone(),
                seed: sc.seed,
                ticks: sc.ticks,
            },
        );
        Self {
            sc,
            options,
            topo,
            integrity: Integrity::new(sc.detector.clone()),
            detached: vec![false; probes.len()],
            probes,
            rngs,
            baselines,
            log,
            buffer: Vec::new(),
            cleared: BTreeSet::new(),
            streaks: BTreeMap::new(),
            swaps: Vec::new(),
            jobs: BTreeMap::new(),
            blacklist_history: Vec::new(),
            trust: BTreeMap::new(),
            misses: BTreeMap::new(),
            last_assessments: Vec::new(),
            windows: Vec::new(),
            telemetry: Vec::new(),
            scopes: Vec::new(),
        }
    }

    fn finish(self) -> RunOutput {
        let events = self.log.into_events();
        let metrics = compute_metrics(&events, self.sc).expect("engine log is self-consistent");
        RunOutput {
            events,
            metrics,
            windows: self.windows,
            telemetry: self.telemetry,
            scopes: self.scopes,
            probes: self.probes,
            topology: self.topo,
        }
    }

    fn max_attempts(&self) -> u32 {
        self.sc.healing.max_attempts
    }

    fn tick(&mut self, t: u64) -> Result<(), Violation> {
        let window_closes = (t + 1).is_multiple_of(self.sc.detector.window);
        let last_tick = t + 1 == self.sc.ticks;

        self.fault_phase(t);
        self.sampling_phase(t, window_closes || last_tick);
        let commands = if window_closes {
            let outcome = self.integrity_phase(t);
            let commands = self.confidence_phase(t, &outcome.assessments);
            self.last_assessments = outcome.assessments.clone();
            self.windows.push(outcome);
            commands
        } else {
            Vec::new()
        };
        self.swap_phase(t, &commands)?;
        self.lifecycle_phase(t, window_closes)?;

        debug_assert_eq!(
            self.topo.state_counts().values().sum::<usize>(),
            self.topo.replicas.len(),
            "every replica is in exactly one state"
        );
        self.topo.check_safety().map_err(|e| violation(t, e))
    }

    fn fault_phase(&mut self, t: u64) {
        for (i, f) in self.sc.faults.iter().enumerate() {
            if f.onset == t {
                self.log.push(
                    t,
                    PriorityClass::Fault,
                    EventKind::FaultActivated {
                        fault: i,
                        class: f.class,
                        targets: f.targets.clone(),
                    },
                );
            }
            if f.end() == Some(t) {
                self.log.push(t, PriorityClass::Fault, EventKind::FaultEnded { fault: i });
            }
        }
    }

    /// Component chain used for fault propagation: the component and everything under it.
    fn chain(&self, component: &ComponentRef) -> Vec<ComponentRef> {
        match component {
            ComponentRef::Replica(r) => self.topo.component_chain(r),
            ComponentRef::Vm(v) => {
                let mut chain = vec![component.clone()];
                if let Some(vm) = self.topo.vm(v) {
                    chain.push(ComponentRef::Hardware(vm.hardware.clone()));
                }
                chain
            }
            ComponentRef::Hardware(_) => vec![component.clone()],
        }
    }

    /// Indices of the faults live at `t` that reach `component` through its chain.
    fn faults_affecting(&self, component: &ComponentRef, t: u64) -> Vec<usize> {
        let chain = self.chain(component);
        let own = component.as_replica();
        self.sc
            .faults
            .iter()
            .enumerate()
            .filter(|(i, f)| {
                f.active_at(t)
                    && f.targets.iter().any(|target| {
                        chain.contains(target)
                            && !(own.is_some_and(|r| target.as_replica() == Some(r) && self.cleared.contains(&(*i, r.clone()))))
                    })
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn truth(&self, component: &ComponentRef, t: u64) -> ComponentTruth<f64> {
        let mut truth = self.baselines[component];
        let deadline = component
            .as_replica()
            .and_then(|r| self.topo.replica(r))
            .and_then(|r| self.topo.function(&r.function))
            .map(|f| f.deadline_ticks);
        for i in self.faults_affecting(component, t) {
            truth = super::faults::inject(&self.sc.faults[i], &truth, t, deadline);
        }
        truth
    }

    fn sampling_phase(&mut self, t: u64, flush_misses: bool) {
        let mut truths: BTreeMap<ComponentRef, ComponentTruth<f64>> = BTreeMap::new();
        for i in 0..self.probes.len() {
            if self.detached[i] {
                continue;
            }
            let target = self.probes[i].target.clone();
            let retired = target
                .as_replica()
                .and_then(|r| self.topo.replica(r))
                .is_some_and(|r| r.state == LifecycleState::Retired);
            let truth = match truths.get(&target) {
                Some(tr) => *tr,
                None => {
                    let tr = self.truth(&target, t);
                    truths.insert(target.clone(), tr);
                    tr
                }
            };
            match sample(&self.probes[i], &truth, retired, t, &self.sc.noise, &mut self.rngs[i]) {
                Ok(record) => {
                    if self.options.record_telemetry {
                        self.telemetry.push(record.clone());
                    }
                    self.buffer.push(record);
                }
                Err(ProbeError::TargetRetired { probe, target }) => {
                    debug!("tick {t}: detaching probe {probe} from {target}");
                    self.detached[i] = true;
                    self.log.push(t, PriorityClass::Sampling, EventKind::ProbeDetached { probe, target });
                }
            }
        }

        for f in &self.topo.functions {
            let Ok(Some(active)) = self.topo.active_replica(&f.id) else {
                continue;
            };
            let c = ComponentRef::Replica(active.clone());
            let truth = truths.get(&c).copied().unwrap_or_else(|| self.truth(&c, t));
            if truth.latency_ms > f.deadline_ticks as f64 || truth.throughput <= 0.0 {
                *self.misses.entry(f.id.clone()).or_default() += 1;
            }
        }
        if flush_misses {
            for (function, count) in std::mem::take(&mut self.misses) {
                if count > 0 {
                    self.log.push(t, PriorityClass::Sampling, EventKind::DeadlineMisses { function, count });
                }
            }
        }
    }

    fn integrity_phase(&mut self, t: u64) -> WindowOutcome<f64> {
        let scope = WindowScope::from_topology(&self.topo);
        let outcome = self.integrity.assess_window(t, &self.buffer, &scope);
        self.buffer.clear();
        if self.options.record_telemetry {
            self.scopes.push(scope);
        }

        for (target, verdicts) in &outcome.verdicts {
            for v in verdicts {
                let key = (target.clone(), v.probe.clone());
                let from = self.trust.get(&key).copied().unwrap_or(TrustStatus::Trusted);
                if from != v.status {
                    self.log.push(
                        t,
                        PriorityClass::Integrity,
                        EventKind::TrustChanged {
                            target: target.clone(),
                            probe: v.probe.clone(),
                            from,
                            to: v.status,
                        },
                    );
                }
                self.trust.insert(key, v.status);
            }
        }
        for a in &outcome.assessments {
            let logged = match a.health {
                Health::Healthy => false,
                Health::Degraded | Health::Faulty => true,
                Health::Unknown => a.target.as_replica().is_some(),
            };
            if logged {
                self.log.push(t, PriorityClass::Integrity, EventKind::Assessment { assessment: a.clone() });
            }
        }
        outcome
    }

    fn confidence_phase(&mut self, t: u64, assessments: &[HealthAssessment<f64>]) -> Vec<SwapCommand> {
        let in_flight: BTreeSet<FunctionId> = self.swaps.iter().map(|s| s.command.function.clone()).collect();
        let ctx = DecisionContext {
            tick: t,
            demand: &self.sc.policy.floors,
            policy: &self.sc.policy.hysteresis,
            streaks: &self.streaks,
            in_flight: &in_flight,
            swap_latency: self.sc.swap.latency,
        };
        let decision = confidence::decide(assessments, &self.topo, &ctx);
        self.streaks = decision.streaks;
        for command in &decision.commands {
            self.log.push(t, PriorityClass::Confidence, EventKind::SwapIssued { command: command.clone() });
        }
        for note in decision.notes {
            let event = match note {
                DecisionNote::DegradedMode { function, reason } => EventKind::DegradedMode { function, reason },
                DecisionNote::UnknownHealth { function, replica } => EventKind::UnknownHealth { function, replica },
            };
            self.log.push(t, PriorityClass::Confidence, event);
        }
        decision.commands
    }

    fn log_transition(&mut self, t: u64, class: PriorityClass, transition: Transition, cause: TransitionCause) {
        if transition.event == LifecycleEvent::BlacklistConfirmed {
            if let Some(r) = self.topo.replica(&transition.replica) {
                let vm = r.host.clone();
                let hw = self.topo.vm(&vm).map(|v| v.hardware.clone()).expect("validated topology");
                self.blacklist_history.push((t, transition.replica.clone(), vm, hw));
            }
        }
        self.log.push(t, class, EventKind::Lifecycle { transition, cause });
    }

    fn stale(&mut self, t: u64, class: PriorityClass, err: SwapError) -> Result<(), Violation> {
        match err {
            SwapError::StaleCommand { function, promote, reason } => {
                debug!("tick {t}: stale swap for {function}: {reason}");
                self.log.push(t, class, EventKind::StaleCommand { function, promote, reason });
                Ok(())
            }
            SwapError::Model(e) => Err(violation(t, e)),
        }
    }

    /// Starts one swap; a zero-latency swap also completes here.
    fn start_swap(&mut self, t: u64, class: PriorityClass, command: &SwapCommand) -> Result<(), Violation> {
        let max = self.max_attempts();
        match execute_swap(command, t, &mut self.topo, &self.sc.swap, max) {
            Ok((execution, transitions)) => {
                self.log.push(t, class, EventKind::SwapStarted { execution: execution.clone() });
                for tr in transitions {
                    self.log_transition(t, class, tr, TransitionCause::Swap);
                }
                if execution.handover_complete == t {
                    self.log.push(
                        t,
                        class,
                        EventKind::SwapCompleted {
                            function: command.function.clone(),
                            promoted: command.promote.clone(),
                            reason: command.reason(),
                        },
                    );
                } else {
                    self.swaps.push(execution);
                }
                Ok(())
            }
            Err(e) => self.stale(t, class, e),
        }
    }

    fn swap_phase(&mut self, t: u64, commands: &[SwapCommand]) -> Result<(), Violation> {
        let (due, pending): (Vec<SwapExecution>, Vec<SwapExecution>) =
            std::mem::take(&mut self.swaps).into_iter().partition(|s| s.handover_complete == t);
        self.swaps = pending;
        let max = self.max_attempts();
        for execution in due {
            match complete_swap(&execution, &mut self.topo, max) {
                Ok(transitions) => {
                    for tr in transitions {
                        self.log_transition(t, PriorityClass::Swap, tr, TransitionCause::Swap);
                    }
                    let command = &execution.command;
                    self.log.push(
                        t,
                        PriorityClass::Swap,
                        EventKind::SwapCompleted {
                            function: command.function.clone(),
                            promoted: command.promote.clone(),
                            reason: command.reason(),
                        },
                    );
                }
                Err(e) => self.stale(t, PriorityClass::Swap, e)?,
            }
        }
        for command in commands {
            self.start_swap(t, PriorityClass::Swap, command)?;
        }
        Ok(())
    }

    fn apply(&mut self, t: u64, replica: &ReplicaId, event: LifecycleEvent, cause: TransitionCause) -> Result<(), Violation> {
        let max = self.max_attempts();
        let tr = self.topo.apply(replica, event, max).map_err(|e| violation(t, e))?;
        self.log_transition(t, PriorityClass::Lifecycle, tr, cause);
        Ok(())
    }

    fn lifecycle_phase(&mut self, t: u64, window_closed: bool) -> Result<(), Violation> {
        if window_closed {
            self.apply_assessments(t)?;
        }
        self.advance_heals(t)?;
        loop {
            self.schedule_heals(t)?;
            let blacklisted = self.blacklist_platforms(t);
            let evicted = self.evict_from_blacklisted(t)?;
            if !blacklisted && !evicted {
                break;
            }
        }
        Ok(())
    }

    /// Standby suspicion and blacklisting from this window's assessments.
    fn apply_assessments(&mut self, t: u64) -> Result<(), Violation> {
        let assessments = self.windows.last().map(|w| w.assessments.clone()).unwrap_or_default();
        for a in &assessments {
            let Some(id) = a.target.as_replica() else {
                continue;
            };
            let Some(state) = self.topo.replica(id).map(|r| r.state) else {
                continue;
            };
            if a.health == Health::Healthy {
                if let Some(r) = self.topo.replica_mut(id) {
                    r.efficiency_score = a.efficiency_estimate;
                }
            }
            let event = match (state, a.health) {
                (LifecycleState::Standby | LifecycleState::Suspect, Health::Faulty) => LifecycleEvent::BlacklistConfirmed,
                (LifecycleState::Standby, Health::Degraded) => LifecycleEvent::AnomalyFlagged,
                (LifecycleState::Suspect, Health::Healthy) => LifecycleEvent::SuspicionCleared,
                _ => continue,
            };
            self.apply(t, id, event, TransitionCause::Assessment)?;
        }
        Ok(())
    }

    fn advance_heals(&mut self, t: u64) -> Result<(), Violation> {
        let jobs: Vec<HealingJob> = self.jobs.values().cloned().collect();
        for job in jobs {
            if t == job.reboot_until {
                self.log.push(
                    t,
                    PriorityClass::Lifecycle,
                    EventKind::RebootComplete {
                        replica: job.replica.clone(),
                        attempt: job.attempt,
                    },
                );
            }
            if t == job.reconfigure_until {
                let tr = finish_reconfigure(&job, &mut self.topo, &self.sc.healing).map_err(|e| violation(t, e))?;
                self.log_transition(t, PriorityClass::Lifecycle, tr, TransitionCause::Heal);
                let own = ComponentRef::Replica(job.replica.clone());
                let clearable: Vec<usize> = self
                    .sc
                    .faults
                    .iter()
                    .enumerate()
                    .filter(|(i, f)| {
                        f.healable() && f.active_at(t) && f.targets.contains(&own) && !self.cleared.contains(&(*i, job.replica.clone()))
                    })
                    .map(|(i, _)| i)
                    .collect();
                for i in clearable {
                    self.cleared.insert((i, job.replica.clone()));
                    self.log.push(
                        t,
                        PriorityClass::Lifecycle,
                        EventKind::FaultCleared {
                            fault: i,
                            replica: job.replica.clone(),
                        },
                    );
                }
            }
            if t == job.test_until {
                let own = ComponentRef::Replica(job.replica.clone());
                let live: Vec<FaultTruth> = self
                    .faults_affecting(&own, t)
                    .into_iter()
                    .map(|i| FaultTruth {
                        healable: self.sc.faults[i].healable(),
                    })
                    .collect();
                let outcome = resolve_test(&job, t, &live).map_err(|e| violation(t, e))?;
                self.log.push(
                    t,
                    PriorityClass::Lifecycle,
                    EventKind::TestResolved {
                        replica: job.replica.clone(),
                        attempt: job.attempt,
                        outcome,
                    },
                );
                let tr = record_test(&job, outcome, &mut self.topo, &self.sc.healing).map_err(|e| violation(t, e))?;
                self.log_transition(t, PriorityClass::Lifecycle, tr, TransitionCause::Heal);
                self.jobs.remove(&job.replica);
            }
        }
        Ok(())
    }

    /// Starts a heal for every BLACKLISTED replica without one, or retires it.
    fn schedule_heals(&mut self, t: u64) -> Result<(), Violation> {
        let waiting: Vec<ReplicaId> = self
            .topo
            .replicas
            .iter()
            .filter(|r| r.state == LifecycleState::Blacklisted && !self.jobs.contains_key(&r.id))
            .map(|r| r.id.clone())
            .collect();
        for id in waiting {
            match schedule_heal(&id, t, &mut self.topo, &self.sc.healing) {
                Ok((job, tr)) => {
                    self.log_transition(t, PriorityClass::Lifecycle, tr, TransitionCause::Heal);
                    self.log.push(t, PriorityClass::Lifecycle, EventKind::HealScheduled { job: job.clone() });
                    self.jobs.insert(id, job);
                }
                Err(HealError::AttemptsExhausted { transition, .. }) => {
                    info!("tick {t}: replica {id} retired after exhausting its heal budget");
                    self.log_transition(t, PriorityClass::Lifecycle, transition, TransitionCause::Heal);
                }
                Err(e) => return Err(violation(t, e)),
            }
        }
        Ok(())
    }

    /// Blacklists every platform on which two distinct replicas were confirmed faulty
    /// within the configured window. Returns whether anything changed.
    fn blacklist_platforms(&mut self, t: u64) -> bool {
        let since = t.saturating_sub(self.sc.platform_blacklist_window);
        let recent: Vec<&(u64, ReplicaId, VmId, HardwareId)> =
            self.blacklist_history.iter().filter(|(tick, ..)| *tick >= since).collect();
        let mut on_vm: BTreeMap<&VmId, BTreeSet<&ReplicaId>> = BTreeMap::new();
        let mut on_hw: BTreeMap<&HardwareId, BTreeSet<&ReplicaId>> = BTreeMap::new();
        for (_, r, vm, hw) in &recent {
            on_vm.entry(vm).or_default().insert(r);
            on_hw.entry(hw).or_default().insert(r);
        }
        let mut newly: Vec<(ComponentRef, Vec<ReplicaId>)> = Vec::new();
        for (vm, rs) in on_vm {
            if rs.len() >= 2 && self.topo.vm(vm).is_some_and(|v| !v.blacklisted) {
                newly.push((ComponentRef::Vm(vm.clone()), rs.into_iter().cloned().collect()));
            }
        }
        for (hw, rs) in on_hw {
            if rs.len() >= 2 && self.topo.hardware(hw).is_some_and(|h| !h.blacklisted) {
                newly.push((ComponentRef::Hardware(hw.clone()), rs.into_iter().cloned().collect()));
            }
        }
        let changed = !newly.is_empty();
        for (platform, replicas) in newly {
            match &platform {
                ComponentRef::Vm(id) => {
                    if let Some(v) = self.topo.vm_platforms.iter_mut().find(|v| &v.id == id) {
                        v.blacklisted = true;
                    }
                }
                ComponentRef::Hardware(id) => {
                    if let Some(h) = self.topo.hardware_platforms.iter_mut().find(|h| &h.id == id) {
                        h.blacklisted = true;
                    }
                }
                ComponentRef::Replica(_) => unreachable!("platforms only"),
            }
            info!("tick {t}: platform {platform} blacklisted");
            self.log.push(t, PriorityClass::Lifecycle, EventKind::PlatformBlacklisted { platform, replicas });
        }
        changed
    }

    /// Moves every ACTIVE replica off a blacklisted platform. Returns whether anything changed.
    fn evict_from_blacklisted(&mut self, t: u64) -> Result<bool, Violation> {
        let stranded: Vec<(FunctionId, ReplicaId)> = self
            .topo
            .functions
            .iter()
            .filter_map(|f| {
                let active = self.topo.active_replica(&f.id).ok()??;
                self.topo.host_blacklisted(active).then(|| (f.id.clone(), active.clone()))
            })
            .collect();
        let changed = !stranded.is_empty();
        for (function, active) in stranded {
            let busy = self.swaps.iter().any(|s| s.command.function == function);
            let candidates: Vec<Candidate<f64>> = confidence::promotion_candidates(&self.last_assessments, &self.topo);
            let best = confidence::mediate_supply_demand(&candidates, std::slice::from_ref(&function), &self.sc.policy.floors)
                .assigned
                .remove(&function);
            if let Some(promote) = best.filter(|_| !busy) {
                    let command = SwapCommand {
                        tick: t,
                        function: function.clone(),
                        demote: Some(Demotion {
                            replica: active.clone(),
                            reason: SwapReason::Fault,
                        }),
                        promote,
                        expected_latency: self.sc.swap.latency,
                    };
                    self.log.push(t, PriorityClass::Lifecycle, EventKind::SwapIssued { command: command.clone() });
                    self.start_swap(t, PriorityClass::Lifecycle, &command)?;
            }
            if self.topo.replica(&active).is_some_and(|r| r.state == LifecycleState::Active) {
                self.apply(t, &active, LifecycleEvent::BlacklistConfirmed, TransitionCause::PlatformEviction)?;
                self.log.push(
                    t,
                    PriorityClass::Lifecycle,
                    EventKind::DegradedMode {
                        function,
                        reason: DegradedReason::ActiveUnfit,
                    },
                );
            }
        }
        Ok(changed)
    }
}
