//! Domain entities, topology validation and the replica lifecycle state machine.
//!
//! The topology is layered: hardware platforms host virtual machine platforms,
//! which host replicas. Every replica serves exactly one function role and every
//! role needs at least two peers. The lifecycle table below is the only place
//! replica states change; callers that feed it an event it does not accept get
//! [`ModelError::IllegalTransition`] back, which the engine treats as a protocol bug.
//!
//! ```text
//!            anomaly_flagged           suspicion_cleared
//!   STANDBY ----------------> SUSPECT ------------------> STANDBY
//!     |  ^ promote                 \ blacklist_confirmed
//!     |  |                          v
//!     |  ACTIVE --blacklist-->  BLACKLISTED --heal_started--> HEALING
//!     |  (swap_out_efficiency/demote -> STANDBY)     |   (attempts exhausted -> RETIRED)
//!     |                                              v heal_complete
//!     +<----------------- test_passed ----------- TESTING --test_failed--> BLACKLISTED | RETIRED
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ComponentRef, FunctionId, HardwareId, ReplicaId, VmId};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_HEAL_ATTEMPTS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Active,
    Standby,
    Suspect,
    Blacklisted,
    Healing,
    Testing,
    Retired,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 7] = [
        Self::Active,
        Self::Standby,
        Self::Suspect,
        Self::Blacklisted,
        Self::Healing,
        Self::Testing,
        Self::Retired,
    ];

    /// Replicas in these states run the function (actively or as warm peers) and are monitored.
    pub fn in_service(self) -> bool {
        matches!(self, Self::Active | Self::Standby | Self::Suspect)
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Active => "ACTIVE",
            Self::Standby => "STANDBY",
            Self::Suspect => "SUSPECT",
            Self::Blacklisted => "BLACKLISTED",
            Self::Healing => "HEALING",
            Self::Testing => "TESTING",
            Self::Retired => "RETIRED",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    AnomalyFlagged,
    SuspicionCleared,
    BlacklistConfirmed,
    SwapOutEfficiency,
    HealStarted,
    HealComplete,
    TestPassed,
    TestFailed,
    Promote,
    Demote,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 10] = [
        Self::AnomalyFlagged,
        Self::SuspicionCleared,
        Self::BlacklistConfirmed,
        Self::SwapOutEfficiency,
        Self::HealStarted,
        Self::HealComplete,
        Self::TestPassed,
        Self::TestFailed,
        Self::Promote,
        Self::Demote,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("illegal lifecycle transition: {event:?} in state {state}")]
    IllegalTransition {
        state: LifecycleState,
        event: LifecycleEvent,
    },
    #[error("function {function} has multiple ACTIVE replicas: {replicas:?}")]
    MultipleActive {
        function: FunctionId,
        replicas: Vec<ReplicaId>,
    },
    #[error("unknown replica {0}")]
    UnknownReplica(ReplicaId),
    #[error("unknown function {0}")]
    UnknownFunction(FunctionId),
}

/// Successor state for `event` in `state`.
///
/// `heal_attempts` is the replica's count before the event takes effect. A heal that
/// cannot start because the budget is spent retires the replica, as does a failed
/// test on the last permitted attempt.
pub fn transition(
    state: LifecycleState,
    event: LifecycleEvent,
    heal_attempts: u32,
    max_heal_attempts: u32,
) -> Result<LifecycleState, ModelError> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    let next = match (state, event) {
        (S::Active, E::AnomalyFlagged) => S::Active,
        (S::Active, E::BlacklistConfirmed) => S::Blacklisted,
        (S::Active, E::SwapOutEfficiency) => S::Standby,
        (S::Active, E::Demote) => S::Standby,

        (S::Standby, E::AnomalyFlagged) => S::Suspect,
        (S::Standby, E::BlacklistConfirmed) => S::Blacklisted,
        (S::Standby, E::Promote) => S::Active,

        (S::Suspect, E::AnomalyFlagged) => S::Suspect,
        (S::Suspect, E::SuspicionCleared) => S::Standby,
        (S::Suspect, E::BlacklistConfirmed) => S::Blacklisted,

        (S::Blacklisted, E::HealStarted) if heal_attempts < max_heal_attempts => S::Healing,
        (S::Blacklisted, E::HealStarted) => S::Retired,

        (S::Healing, E::HealComplete) => S::Testing,

        (S::Testing, E::TestPassed) => S::Standby,
        (S::Testing, E::TestFailed) if heal_attempts >= max_heal_attempts => S::Retired,
        (S::Testing, E::TestFailed) => S::Blacklisted,

        (state, event) => return Err(ModelError::IllegalTransition { state, event }),
    };
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwarePlatform {
    pub id: HardwareId,
    #[serde(default)]
    pub blacklisted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmPlatform {
    pub id: VmId,
    pub hardware: HardwareId,
    #[serde(default)]
    pub blacklisted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionRole<T = f64> {
    pub id: FunctionId,
    /// Free-form role name such as `navigation` or `resource-economy`.
    pub name: String,
    /// Maximum tolerable per-task latency, in ticks.
    pub deadline_ticks: u64,
    /// Throughput that counts as full efficiency.
    pub nominal_throughput: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replica<T = f64> {
    pub id: ReplicaId,
    pub function: FunctionId,
    pub host: VmId,
    pub state: LifecycleState,
    pub efficiency_score: T,
    pub heal_attempts: u32,
    /// False between `blacklist_confirmed` and the next `test_passed`.
    pub certified: bool,
}

impl<T: Scalar> Replica<T> {
    pub fn new(id: impl Into<String>, function: impl Into<String>, host: impl Into<String>, state: LifecycleState) -> Self {
        Self {
            id: ReplicaId::new(id),
            function: FunctionId::new(function),
            host: VmId::new(host),
            state,
            efficiency_score: T::one(),
            heal_attempts: 0,
            certified: true,
        }
    }
}

/// One applied lifecycle step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub replica: ReplicaId,
    pub event: LifecycleEvent,
    pub from: LifecycleState,
    pub to: LifecycleState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology<T = f64> {
    pub hardware_platforms: Vec<HardwarePlatform>,
    pub vm_platforms: Vec<VmPlatform>,
    pub replicas: Vec<Replica<T>>,
    pub functions: Vec<FunctionRole<T>>,
}

impl<T: Scalar> Topology<T> {
    pub fn replica(&self, id: &ReplicaId) -> Option<&Replica<T>> {
        self.replicas.iter().find(|r| &r.id == id)
    }

    pub fn replica_mut(&mut self, id: &ReplicaId) -> Option<&mut Replica<T>> {
        self.replicas.iter_mut().find(|r| &r.id == id)
    }

    pub fn function(&self, id: &FunctionId) -> Option<&FunctionRole<T>> {
        self.functions.iter().find(|f| &f.id == id)
    }

    pub fn vm(&self, id: &VmId) -> Option<&VmPlatform> {
        self.vm_platforms.iter().find(|v| &v.id == id)
    }

    pub fn hardware(&self, id: &HardwareId) -> Option<&HardwarePlatform> {
        self.hardware_platforms.iter().find(|h| &h.id == id)
    }

    /// Hardware platform underneath a replica, if the bindings resolve.
    pub fn hardware_of(&self, replica: &ReplicaId) -> Option<&HardwareId> {
        let r = self.replica(replica)?;
        self.vm(&r.host).map(|vm| &vm.hardware)
    }

    /// The replica itself plus its vm and hardware platform, as component references.
    pub fn component_chain(&self, replica: &ReplicaId) -> Vec<ComponentRef> {
        let mut chain = vec![ComponentRef::Replica(replica.clone())];
        if let Some(r) = self.replica(replica) {
            chain.push(ComponentRef::Vm(r.host.clone()));
            if let Some(vm) = self.vm(&r.host) {
                chain.push(ComponentRef::Hardware(vm.hardware.clone()));
            }
        }
        chain
    }

    pub fn contains(&self, component: &ComponentRef) -> bool {
        match component {
            ComponentRef::Replica(id) => self.replica(id).is_some(),
            ComponentRef::Vm(id) => self.vm(id).is_some(),
            ComponentRef::Hardware(id) => self.hardware(id).is_some(),
        }
    }

    /// True when the replica's vm platform or hardware platform is blacklisted.
    pub fn host_blacklisted(&self, replica: &ReplicaId) -> bool {
        let Some(r) = self.replica(replica) else {
            return false;
        };
        match self.vm(&r.host) {
            Some(vm) => vm.blacklisted || self.hardware(&vm.hardware).is_some_and(|h| h.blacklisted),
            None => false,
        }
    }

    pub fn peers<'a>(&'a self, function: &'a FunctionId) -> impl Iterator<Item = &'a Replica<T>> + 'a {
        self.replicas.iter().filter(move |r| &r.function == function)
    }

    /// The unique ACTIVE replica of `function`, or `None` during a swap gap.
    pub fn active_replica(&self, function: &FunctionId) -> Result<Option<&ReplicaId>, ModelError> {
        if self.function(function).is_none() {
            return Err(ModelError::UnknownFunction(function.clone()));
        }
        let mut active = self
            .replicas
            .iter()
            .filter(|r| &r.function == function && r.state == LifecycleState::Active)
            .map(|r| &r.id);
        let first = active.next();
        let rest: Vec<&ReplicaId> = active.collect();
        if rest.is_empty() {
            return Ok(first);
        }
        let mut replicas: Vec<ReplicaId> = first.into_iter().chain(rest).cloned().collect();
        replicas.sort();
        Err(ModelError::MultipleActive {
            function: function.clone(),
            replicas,
        })
    }

    /// Drives one replica through the lifecycle table and keeps `certified` in step.
    pub fn apply(
        &mut self,
        replica: &ReplicaId,
        event: LifecycleEvent,
        max_heal_attempts: u32,
    ) -> Result<Transition, ModelError> {
        let r = self
            .replica_mut(replica)
            .ok_or_else(|| ModelError::UnknownReplica(replica.clone()))?;
        let from = r.state;
        let to = transition(from, event, r.heal_attempts, max_heal_attempts)?;
        r.state = to;
        match event {
            LifecycleEvent::BlacklistConfirmed => r.certified = false,
            LifecycleEvent::TestPassed => r.certified = true,
            _ => {}
        }
        Ok(Transition {
            replica: replica.clone(),
            event,
            from,
            to,
        })
    }

    pub fn state_counts(&self) -> BTreeMap<LifecycleState, usize> {
        let mut counts: BTreeMap<LifecycleState, usize> = LifecycleState::ALL.iter().map(|s| (*s, 0)).collect();
        for r in &self.replicas {
            *counts.entry(r.state).or_default() += 1;
        }
        counts
    }

    /// Checks the run-time safety properties: one ACTIVE per function at most, and no
    /// ACTIVE replica on a blacklisted host.
    pub fn check_safety(&self) -> Result<(), SafetyViolation> {
        for f in &self.functions {
            match self.active_replica(&f.id) {
                Ok(Some(active)) if self.host_blacklisted(active) => {
                    return Err(SafetyViolation::ActiveOnBlacklistedHost(active.clone()));
                }
                Ok(_) => {}
                Err(e) => return Err(SafetyViolation::Model(e)),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SafetyViolation {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("ACTIVE replica {0} runs on a blacklisted platform")]
    ActiveOnBlacklistedHost(ReplicaId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    Hardware,
    Vm,
    Replica,
    Function,
}

/// A broken topology invariant, naming the offending entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { class: EntityClass, id: String },
    DanglingHost { replica: ReplicaId },
    DanglingHardware { vm: VmId },
    UnknownFunction { replica: ReplicaId },
    NoPeer { function: FunctionId },
    ZeroDeadline { function: FunctionId },
    EfficiencyOutOfRange { replica: ReplicaId },
    MultipleActive { function: FunctionId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId { class, id } => write!(f, "duplicate {class:?} id `{id}`"),
            Self::DanglingHost { replica } => write!(f, "replica `{replica}` is bound to an unknown vm platform"),
            Self::DanglingHardware { vm } => write!(f, "vm platform `{vm}` is bound to an unknown hardware platform"),
            Self::UnknownFunction { replica } => write!(f, "replica `{replica}` serves an unknown function"),
            Self::NoPeer { function } => write!(f, "function `{function}` has fewer than 2 replicas"),
            Self::ZeroDeadline { function } => write!(f, "function `{function}` has deadline_ticks < 1"),
            Self::EfficiencyOutOfRange { replica } => write!(f, "replica `{replica}` efficiency_score outside [0,1]"),
            Self::MultipleActive { function } => write!(f, "function `{function}` starts with more than one ACTIVE replica"),
        }
    }
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dups.insert(id.to_owned());
        }
    }
    dups.into_iter().collect()
}

/// All invariant violations in `topology`; empty iff it is well formed.
pub fn validate_topology<T: Scalar>(topology: &Topology<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let classes: [(EntityClass, Vec<String>); 4] = [
        (EntityClass::Hardware, duplicates(topology.hardware_platforms.iter().map(|h| h.id.as_str()))),
        (EntityClass::Vm, duplicates(topology.vm_platforms.iter().map(|v| v.id.as_str()))),
        (EntityClass::Replica, duplicates(topology.replicas.iter().map(|r| r.id.as_str()))),
        (EntityClass::Function, duplicates(topology.functions.iter().map(|f| f.id.as_str()))),
    ];
    for (class, ids) in classes {
        out.extend(ids.into_iter().map(|id| Violation::DuplicateId { class, id }));
    }

    for vm in &topology.vm_platforms {
        if topology.hardware(&vm.hardware).is_none() {
            out.push(Violation::DanglingHardware { vm: vm.id.clone() });
        }
    }
    for r in &topology.replicas {
        if topology.vm(&r.host).is_none() {
            out.push(Violation::DanglingHost { replica: r.id.clone() });
        }
        if topology.function(&r.function).is_none() {
            out.push(Violation::UnknownFunction { replica: r.id.clone() });
        }
        if !(r.efficiency_score >= T::zero() && r.efficiency_score <= T::one()) {
            out.push(Violation::EfficiencyOutOfRange { replica: r.id.clone() });
        }
    }
    for f in &topology.functions {
        if f.deadline_ticks < 1 {
            out.push(Violation::ZeroDeadline { function: f.id.clone() });
        }
        if topology.peers(&f.id).count() < 2 {
            out.push(Violation::NoPeer { function: f.id.clone() });
        }
        if topology.peers(&f.id).filter(|r| r.state == LifecycleState::Active).count() > 1 {
            out.push(Violation::MultipleActive { function: f.id.clone() });
        }
    }
    out
}
