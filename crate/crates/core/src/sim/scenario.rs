//! Scenario documents: parsing, validation and topology construction.
//!
//! A scenario is one JSON object. Unknown keys are rejected everywhere; every
//! section except `name`, `ticks` and `topology` has defaults. See the README for
//! the full schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::faults::{FaultClass, FaultSpec};
use crate::confidence::{DemandTable, HysteresisPolicy};
use crate::ids::{ComponentRef, FunctionId, HardwareId, ReplicaId, VmId};
use crate::integrity::{trust::MAX_PROBES_PER_TARGET, IntegrityConfig};
use crate::model::{self, FunctionRole, HardwarePlatform, LifecycleState, Replica, Topology, VmPlatform};
use crate::probes::{ComponentTruth, Metric, MetricMap, NoiseConfig, Probe};
use crate::swapexec::{HealingConfig, SwapConfig};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareDoc {
    pub id: HardwareId,
    #[serde(default, skip_serializing_if = "MetricMap::is_empty")]
    pub baseline: MetricMap<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmDoc {
    pub id: VmId,
    pub hardware: HardwareId,
    #[serde(default, skip_serializing_if = "MetricMap::is_empty")]
    pub baseline: MetricMap<Real>,
}

fn default_nominal_throughput() -> Real {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDoc {
    pub id: FunctionId,
    pub name: String,
    pub deadline_ticks: u64,
    #[serde(default = "default_nominal_throughput")]
    pub nominal_throughput: Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Active,
    Standby,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaDoc {
    pub id: ReplicaId,
    pub function: FunctionId,
    pub host: VmId,
    /// When no replica of a function is marked active, the first one listed is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
    #[serde(default, skip_serializing_if = "MetricMap::is_empty")]
    pub baseline: MetricMap<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub hardware_platforms: Vec<HardwareDoc>,
    pub vm_platforms: Vec<VmDoc>,
    pub functions: Vec<FunctionDoc>,
    pub replicas: Vec<ReplicaDoc>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyDoc {
    #[serde(flatten)]
    pub hysteresis: HysteresisPolicy<Real>,
    pub floors: DemandTable<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlassSubstitution {
    pub gray_fraction: f64,
}

fn default_platform_window() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub ticks: u64,
    pub topology: TopologyDoc,
    /// Overrides of the default ground-truth baseline, for every component.
    #[serde(default)]
    pub baseline: MetricMap<Real>,
    #[serde(default)]
    pub probes: Vec<Probe<Real>>,
    #[serde(default)]
    pub noise: NoiseConfig<Real>,
    #[serde(default)]
    pub detector: IntegrityConfig<Real>,
    #[serde(default)]
    pub policy: PolicyDoc,
    #[serde(default)]
    pub swap: SwapConfig,
    #[serde(default)]
    pub healing: HealingConfig,
    /// Two distinct replicas blacklisted on one platform within this many ticks blacklist the platform.
    #[serde(default = "default_platform_window")]
    pub platform_blacklist_window: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glass_substitution: Option<GlassSubstitution>,
    #[serde(default)]
    pub faults: Vec<FaultSpec<Real>>,
}

/// One validation failure: a JSON path into the document and what is wrong there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario is invalid:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<ValidationIssue>),
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn issue(out: &mut Vec<ValidationIssue>, path: impl Into<String>, message: impl Into<String>) {
    out.push(ValidationIssue {
        path: path.into(),
        message: message.into(),
    });
}

fn check_baseline(out: &mut Vec<ValidationIssue>, path: &str, baseline: &MetricMap<Real>) {
    for (m, v) in baseline {
        let ok = v.is_finite() && *v >= 0.0 && (*m != Metric::ErrorRate || *v <= 1.0);
        if !ok {
            issue(out, format!("{path}.{m}"), format!("baseline value {v} out of range"));
        }
    }
}

impl Scenario {
    pub fn with_ticks(mut self, ticks: u64) -> Self {
        self.ticks = ticks;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Initial topology: every replica STANDBY except one ACTIVE per function.
    pub fn build_topology(&self) -> Topology<Real> {
        let doc = &self.topology;
        let explicit: BTreeSet<&FunctionId> = doc
            .replicas
            .iter()
            .filter(|r| r.initial_state == Some(InitialState::Active))
            .map(|r| &r.function)
            .collect();
        let mut seeded: BTreeSet<&FunctionId> = BTreeSet::new();
        let replicas = doc
            .replicas
            .iter()
            .map(|r| {
                let active = match r.initial_state {
                    Some(InitialState::Active) => true,
                    Some(InitialState::Standby) => false,
                    None => !explicit.contains(&r.function) && seeded.insert(&r.function),
                };
                let state = if active { LifecycleState::Active } else { LifecycleState::Standby };
                Replica {
                    id: r.id.clone(),
                    function: r.function.clone(),
                    host: r.host.clone(),
                    state,
                    efficiency_score: 1.0,
                    heal_attempts: 0,
                    certified: true,
                }
            })
            .collect();
        Topology {
            hardware_platforms: doc
                .hardware_platforms
                .iter()
                .map(|h| HardwarePlatform { id: h.id.clone(), blacklisted: false })
                .collect(),
            vm_platforms: doc
                .vm_platforms
                .iter()
                .map(|v| VmPlatform { id: v.id.clone(), hardware: v.hardware.clone(), blacklisted: false })
                .collect(),
            replicas,
            functions: doc
                .functions
                .iter()
                .map(|f| FunctionRole {
                    id: f.id.clone(),
                    name: f.name.clone(),
                    deadline_ticks: f.deadline_ticks,
                    nominal_throughput: f.nominal_throughput,
                })
                .collect(),
        }
    }

    /// Ground truth of `component` before any fault.
    pub fn baseline_truth(&self, component: &ComponentRef) -> ComponentTruth<Real> {
        let mut truth = ComponentTruth::default();
        let doc = &self.topology;
        let own = match component {
            ComponentRef::Replica(id) => doc.replicas.iter().find(|r| &r.id == id).map(|r| &r.baseline),
            ComponentRef::Vm(id) => doc.vm_platforms.iter().find(|v| &v.id == id).map(|v| &v.baseline),
            ComponentRef::Hardware(id) => doc.hardware_platforms.iter().find(|h| &h.id == id).map(|h| &h.baseline),
        };
        for (m, v) in self.baseline.iter().chain(own.into_iter().flatten()) {
            truth.set(*m, *v);
        }
        truth
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(issues))
        }
    }

    /// Every validation problem in the document.
    pub fn issues(&self) -> Vec<ValidationIssue> {
        let mut out = Vec::new();
        if self.ticks < 1 {
            issue(&mut out, "ticks", "must be at least 1");
        }

        let topology = self.build_topology();
        for v in model::validate_topology(&topology) {
            let path = match &v {
                model::Violation::DuplicateId { class, .. } => match class {
                    model::EntityClass::Hardware => "topology.hardware_platforms",
                    model::EntityClass::Vm => "topology.vm_platforms",
                    model::EntityClass::Replica => "topology.replicas",
                    model::EntityClass::Function => "topology.functions",
                },
                model::Violation::DanglingHardware { .. } => "topology.vm_platforms",
                model::Violation::ZeroDeadline { .. } | model::Violation::NoPeer { .. } => "topology.functions",
                _ => "topology.replicas",
            };
            issue(&mut out, path, v.to_string());
        }
        check_baseline(&mut out, "baseline", &self.baseline);
        for (i, r) in self.topology.replicas.iter().enumerate() {
            check_baseline(&mut out, &format!("topology.replicas[{i}].baseline"), &r.baseline);
        }
        for (i, v) in self.topology.vm_platforms.iter().enumerate() {
            check_baseline(&mut out, &format!("topology.vm_platforms[{i}].baseline"), &v.baseline);
        }
        for (i, h) in self.topology.hardware_platforms.iter().enumerate() {
            check_baseline(&mut out, &format!("topology.hardware_platforms[{i}].baseline"), &h.baseline);
        }
        for (i, f) in self.topology.functions.iter().enumerate() {
            if !(f.nominal_throughput.is_finite() && f.nominal_throughput > 0.0) {
                issue(&mut out, format!("topology.functions[{i}].nominal_throughput"), "must be positive");
            }
        }

        let mut probe_ids = BTreeSet::new();
        let mut per_target: BTreeMap<&ComponentRef, usize> = BTreeMap::new();
        for (i, p) in self.probes.iter().enumerate() {
            if !probe_ids.insert(&p.id) {
                issue(&mut out, format!("probes[{i}].id"), format!("duplicate probe id `{}`", p.id));
            }
            if !topology.contains(&p.target) {
                issue(&mut out, format!("probes[{i}].target"), format!("unknown component {}", p.target));
            }
            *per_target.entry(&p.target).or_default() += 1;
        }
        for (target, n) in per_target {
            if n > MAX_PROBES_PER_TARGET {
                issue(&mut out, "probes", format!("{target} has {n} probes; at most {MAX_PROBES_PER_TARGET} allowed"));
            }
        }
        for (m, v) in &self.noise.0 {
            if !(v.is_finite() && *v >= 0.0) {
                issue(&mut out, format!("noise.{m}"), "half-width must be non-negative");
            }
        }

        let d = &self.detector;
        if d.window < 1 {
            issue(&mut out, "detector.window", "must be at least 1");
        }
        if d.persistence < 2 {
            issue(&mut out, "detector.persistence", "must be at least 2 so a single spike cannot confirm a fault");
        }
        if !(d.tau.is_finite() && d.tau > 0.0) {
            issue(&mut out, "detector.tau", "must be positive");
        }
        if !(d.tolerance.is_finite() && d.tolerance >= 0.0) {
            issue(&mut out, "detector.tolerance", "must be non-negative");
        }
        for (i, r) in d.rules.iter().enumerate() {
            if !r.threshold.is_finite() {
                issue(&mut out, format!("detector.rules[{i}].threshold"), "must be finite");
            }
        }

        let p = &self.policy;
        if !(p.hysteresis.delta.is_finite() && p.hysteresis.delta >= 0.0) {
            issue(&mut out, "policy.delta", "must be non-negative");
        }
        if p.hysteresis.streak < 1 {
            issue(&mut out, "policy.streak", "must be at least 1");
        }
        for (f, v) in &p.floors.floors {
            if topology.function(f).is_none() {
                issue(&mut out, format!("policy.floors.{f}"), "unknown function");
            }
            if !(0.0..=1.0).contains(v) {
                issue(&mut out, format!("policy.floors.{f}"), "floor must be in [0,1]");
            }
        }

        let h = &self.healing;
        for (name, v) in [("reboot", h.reboot), ("reconfigure", h.reconfigure), ("test", h.test)] {
            if v < 1 {
                issue(&mut out, format!("healing.{name}"), "phase must last at least 1 tick");
            }
        }
        if h.max_attempts < 1 {
            issue(&mut out, "healing.max_attempts", "must be at least 1");
        }
        if let Some(g) = &self.glass_substitution {
            if !(0.0..=1.0).contains(&g.gray_fraction) {
                issue(&mut out, "glass_substitution.gray_fraction", "must be in [0,1]");
            }
        }

        for (i, f) in self.faults.iter().enumerate() {
            self.check_fault(&mut out, i, f, &topology);
        }
        out
    }

    fn check_fault(&self, out: &mut Vec<ValidationIssue>, i: usize, f: &FaultSpec<Real>, topology: &Topology<Real>) {
        let path = format!("faults[{i}]");
        if f.targets.is_empty() {
            issue(out, format!("{path}.targets"), "at least one target required");
        }
        for t in &f.targets {
            if !topology.contains(t) {
                issue(out, format!("{path}.targets"), format!("unknown component {t}"));
            }
        }
        if f.onset >= self.ticks {
            issue(out, format!("{path}.onset"), format!("onset {} is beyond the run length {}", f.onset, self.ticks));
        }
        if !f.magnitude.is_finite() {
            issue(out, format!("{path}.magnitude"), "must be finite");
        }
        if f.duration == Some(0) {
            issue(out, format!("{path}.duration"), "must be at least 1 tick (omit for permanent)");
        }
        match f.class {
            FaultClass::PermanentCrash if f.duration.is_some() => {
                issue(out, format!("{path}.duration"), "permanent_crash cannot have a duration");
            }
            FaultClass::LatencyDrift | FaultClass::GremlinBurst if f.duration.is_none() => {
                issue(out, format!("{path}.duration"), format!("{:?} needs a finite duration", f.class));
            }
            _ => {}
        }
        if matches!(f.class, FaultClass::ErrorBurst | FaultClass::GremlinBurst | FaultClass::ThroughputDroop)
            && !(0.0..=1.0).contains(&f.magnitude)
        {
            issue(out, format!("{path}.magnitude"), "must be in [0,1] for this class");
        }
        if f.class == FaultClass::DeadlineCreep && f.targets.iter().any(|t| t.as_replica().is_none()) {
            issue(out, format!("{path}.targets"), "deadline_creep applies to replicas only");
        }
        if f.class == FaultClass::GremlinBurst {
            let distinct: BTreeSet<&ComponentRef> = f.targets.iter().collect();
            if distinct.len() < 2 {
                issue(out, format!("{path}.targets"), "gremlin_burst needs at least 2 distinct targets");
            }
            let hardware: BTreeSet<Option<HardwareId>> = f
                .targets
                .iter()
                .map(|t| match t {
                    ComponentRef::Replica(r) => topology.hardware_of(r).cloned(),
                    ComponentRef::Vm(v) => topology.vm(v).map(|vm| vm.hardware.clone()),
                    ComponentRef::Hardware(h) => Some(h.clone()),
                })
                .collect();
            if hardware.len() > 1 || hardware.contains(&None) {
                issue(out, format!("{path}.targets"), "gremlin_burst targets must share one hardware platform");
            }
        }
    }
}
