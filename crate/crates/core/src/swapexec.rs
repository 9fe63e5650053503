//! Swap stations and the heal pipeline.
//!
//! A swap hands a function over from its ACTIVE replica to a certified standby
//! after `latency` ticks. Fault swaps pull the old replica out immediately, so the
//! function has no ACTIVE replica for the whole handover; warm efficiency swaps keep
//! the old replica serving until the new one takes over, leaving no gap.
//!
//! A blacklisted replica is healed in three timed phases: reboot, reconfigure,
//! test. The test passes unless a permanent fault still affects the replica.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{SwapCommand, SwapReason};
use crate::ids::{FunctionId, ReplicaId};
use crate::model::{LifecycleEvent, LifecycleState, ModelError, Topology, Transition};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapConfig {
    pub latency: u64,
    pub warm_handover: bool,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            latency: 5,
            warm_handover: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapExecution {
    pub command: SwapCommand,
    pub start: u64,
    pub handover_complete: u64,
    /// Ticks during which the function has no ACTIVE replica.
    pub gap_ticks: u64,
    /// Old replica keeps serving until `handover_complete`.
    pub warm: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwapError {
    #[error("stale swap command for {function}: {reason}")]
    StaleCommand { function: FunctionId, promote: ReplicaId, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn stale(command: &SwapCommand, reason: impl Into<String>) -> SwapError {
    SwapError::StaleCommand {
        function: command.function.clone(),
        promote: command.promote.clone(),
        reason: reason.into(),
    }
}

/// Checks that `promote` is still a certified standby on a healthy host, serving the
/// command's function, and that `demote` (if any) is still that function's ACTIVE replica.
pub fn revalidate<T: Scalar>(command: &SwapCommand, topology: &Topology<T>, check_demote: bool) -> Result<(), SwapError> {
    if let Some(d) = &command.demote {
        if d.replica == command.promote {
            return Err(stale(command, "demote and promote name the same replica"));
        }
    }
    let target = topology
        .replica(&command.promote)
        .ok_or_else(|| stale(command, "promote target does not exist"))?;
    if target.function != command.function {
        return Err(stale(command, "promote target serves another function"));
    }
    if target.state != LifecycleState::Standby {
        return Err(stale(command, format!("promote target is {}", target.state)));
    }
    if !target.certified {
        return Err(stale(command, "promote target is not certified"));
    }
    if topology.host_blacklisted(&command.promote) {
        return Err(stale(command, "promote target host is blacklisted"));
    }
    if check_demote {
        let active = topology.active_replica(&command.function)?;
        let expected = command.demote.as_ref().map(|d| &d.replica);
        if active != expected {
            return Err(stale(command, "active replica changed since the decision"));
        }
    }
    Ok(())
}

/// Starts a swap at `now`, applying the immediate demotion if the swap is not warm.
///
/// If `latency` is zero the handover also completes within this call.
pub fn execute_swap<T: Scalar>(
    command: &SwapCommand,
    now: u64,
    topology: &mut Topology<T>,
    config: &SwapConfig,
    max_heal_attempts: u32,
) -> Result<(SwapExecution, Vec<Transition>), SwapError> {
    revalidate(command, topology, true)?;
    let warm = config.warm_handover && command.reason() == SwapReason::Efficiency;
    let mut transitions = Vec::new();
    if !warm {
        if let Some(d) = &command.demote {
            let event = match d.reason {
                SwapReason::Fault => LifecycleEvent::BlacklistConfirmed,
                SwapReason::Efficiency => LifecycleEvent::SwapOutEfficiency,
            };
            transitions.push(topology.apply(&d.replica, event, max_heal_attempts)?);
        }
    }
    let execution = SwapExecution {
        command: command.clone(),
        start: now,
        handover_complete: now + config.latency,
        gap_ticks: if warm { 0 } else { config.latency },
        warm,
    };
    if config.latency == 0 {
        transitions.extend(complete_swap(&execution, topology, max_heal_attempts)?);
    }
    Ok((execution, transitions))
}

/// Finishes a handover at `execution.handover_complete`.
///
/// On a stale promote target a warm swap leaves the old replica ACTIVE; a cold swap
/// leaves the function without an ACTIVE replica until the next decision round.
pub fn complete_swap<T: Scalar>(
    execution: &SwapExecution,
    topology: &mut Topology<T>,
    max_heal_attempts: u32,
) -> Result<Vec<Transition>, SwapError> {
    let command = &execution.command;
    revalidate(command, topology, execution.warm)?;
    let mut transitions = Vec::new();
    if execution.warm {
        if let Some(d) = &command.demote {
            transitions.push(topology.apply(&d.replica, LifecycleEvent::SwapOutEfficiency, max_heal_attempts)?);
        }
    } else if topology.active_replica(&command.function)?.is_some() {
        return Err(stale(command, "function already has an ACTIVE replica"));
    }
    transitions.push(topology.apply(&command.promote, LifecycleEvent::Promote, max_heal_attempts)?);
    Ok(transitions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealingConfig {
    pub reboot: u64,
    pub reconfigure: u64,
    pub test: u64,
    pub max_attempts: u32,
}

impl Default for HealingConfig {
    fn default() -> Self {
        Self {
            reboot: 200,
            reconfigure: 50,
            test: 50,
            max_attempts: crate::model::DEFAULT_MAX_HEAL_ATTEMPTS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealingJob {
    pub replica: ReplicaId,
    pub attempt: u32,
    pub started: u64,
    pub reboot_until: u64,
    pub reconfigure_until: u64,
    pub test_until: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TestOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HealError {
    #[error("replica {replica} used all {attempts} heal attempts and is retired")]
    AttemptsExhausted {
        replica: ReplicaId,
        attempts: u32,
        transition: Transition,
    },
    #[error("replica {replica} is {state}, expected {expected}")]
    WrongState {
        replica: ReplicaId,
        state: LifecycleState,
        expected: LifecycleState,
    },
    #[error("test for {replica} resolves at tick {due}, not {now}")]
    NotDue { replica: ReplicaId, due: u64, now: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn expect_state<T: Scalar>(topology: &Topology<T>, replica: &ReplicaId, expected: LifecycleState) -> Result<(), HealError> {
    let r = topology
        .replica(replica)
        .ok_or_else(|| ModelError::UnknownReplica(replica.clone()))?;
    if r.state != expected {
        return Err(HealError::WrongState {
            replica: replica.clone(),
            state: r.state,
            expected,
        });
    }
    Ok(())
}

/// Starts healing a BLACKLISTED replica, or retires it when its heal budget is spent.
pub fn schedule_heal<T: Scalar>(
    replica: &ReplicaId,
    now: u64,
    topology: &mut Topology<T>,
    config: &HealingConfig,
) -> Result<(HealingJob, Transition), HealError> {
    expect_state(topology, replica, LifecycleState::Blacklisted)?;
    let transition = topology.apply(replica, LifecycleEvent::HealStarted, config.max_attempts)?;
    let r = topology.replica_mut(replica).expect("checked above");
    if transition.to == LifecycleState::Retired {
        return Err(HealError::AttemptsExhausted {
            replica: replica.clone(),
            attempts: r.heal_attempts,
            transition,
        });
    }
    r.heal_attempts += 1;
    let reboot_until = now + config.reboot;
    let reconfigure_until = reboot_until + config.reconfigure;
    let job = HealingJob {
        replica: replica.clone(),
        attempt: r.heal_attempts,
        started: now,
        reboot_until,
        reconfigure_until,
        test_until: reconfigure_until + config.test,
        outcome: None,
    };
    Ok((job, transition))
}

/// HEALING → TESTING once reconfiguration is over.
pub fn finish_reconfigure<T: Scalar>(job: &HealingJob, topology: &mut Topology<T>, config: &HealingConfig) -> Result<Transition, HealError> {
    expect_state(topology, &job.replica, LifecycleState::Healing)?;
    Ok(topology.apply(&job.replica, LifecycleEvent::HealComplete, config.max_attempts)?)
}

/// What the autonomous test can observe about one fault still affecting the replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultTruth {
    pub healable: bool,
}

/// PASS unless a permanent-class fault still affects the replica.
pub fn resolve_test(job: &HealingJob, now: u64, active_faults: &[FaultTruth]) -> Result<TestOutcome, HealError> {
    if now != job.test_until {
        return Err(HealError::NotDue {
            replica: job.replica.clone(),
            due: job.test_until,
            now,
        });
    }
    Ok(if active_faults.iter().any(|f| !f.healable) {
        TestOutcome::Fail
    } else {
        TestOutcome::Pass
    })
}

/// Applies `test_passed` / `test_failed` for a resolved job.
pub fn record_test<T: Scalar>(
    job: &HealingJob,
    outcome: TestOutcome,
    topology: &mut Topology<T>,
    config: &HealingConfig,
) -> Result<Transition, HealError> {
    expect_state(topology, &job.replica, LifecycleState::Testing)?;
    let event = match outcome {
        TestOutcome::Pass => LifecycleEvent::TestPassed,
        TestOutcome::Fail => LifecycleEvent::TestFailed,
    };
    Ok(topology.apply(&job.replica, event, config.max_attempts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::Demotion;
    use crate::model::{FunctionRole, HardwarePlatform, Replica, VmPlatform};

    fn topology() -> Topology<f64> {
        Topology {
            hardware_platforms: vec![HardwarePlatform { id: "hw1".into(), blacklisted: false }],
            vm_platforms: vec![VmPlatform { id: "vm1".into(), hardware: "hw1".into(), blacklisted: false }],
            replicas: vec![
                Replica::new("a", "f", "vm1", LifecycleState::Active),
                Replica::new("b", "f", "vm1", LifecycleState::Standby),
                Replica::new("c", "f", "vm1", LifecycleState::Standby),
            ],
            functions: vec![FunctionRole { id: "f".into(), name: "navigation".into(), deadline_ticks: 50, nominal_throughput: 100.0 }],
        }
    }

    fn command(reason: SwapReason) -> SwapCommand {
        SwapCommand {
            tick: 100,
            function: "f".into(),
            demote: Some(Demotion { replica: "a".into(), reason }),
            promote: "b".into(),
            expected_latency: 5,
        }
    }

    #[test]
    fn fault_swap_leaves_latency_gap() {
        let mut t = topology();
        let (exec, tr) = execute_swap(&command(SwapReason::Fault), 100, &mut t, &SwapConfig::default(), 3).unwrap();
        assert_eq!(exec.handover_complete, 105);
        assert_eq!(exec.gap_ticks, 5);
        assert_eq!(tr[0].to, LifecycleState::Blacklisted);
        assert_eq!(t.active_replica(&"f".into()).unwrap(), None);
        let tr = complete_swap(&exec, &mut t, 3).unwrap();
        assert_eq!(tr.last().unwrap().to, LifecycleState::Active);
        assert_eq!(t.active_replica(&"f".into()).unwrap().unwrap().as_str(), "b");
    }

    #[test]
    fn warm_efficiency_swap_has_no_gap() {
        let mut t = topology();
        let (exec, tr) = execute_swap(&command(SwapReason::Efficiency), 100, &mut t, &SwapConfig::default(), 3).unwrap();
        assert_eq!(exec.gap_ticks, 0);
        assert!(tr.is_empty());
        assert_eq!(t.active_replica(&"f".into()).unwrap().unwrap().as_str(), "a");
        complete_swap(&exec, &mut t, 3).unwrap();
        assert_eq!(t.replica(&"a".into()).unwrap().state, LifecycleState::Standby);
        assert_eq!(t.active_replica(&"f".into()).unwrap().unwrap().as_str(), "b");
    }

    #[test]
    fn crashed_promote_target_makes_command_stale() {
        let mut t = topology();
        t.apply(&"b".into(), LifecycleEvent::BlacklistConfirmed, 3).unwrap();
        let err = execute_swap(&command(SwapReason::Fault), 100, &mut t, &SwapConfig::default(), 3).unwrap_err();
        assert!(matches!(err, SwapError::StaleCommand { .. }));
        // Nothing was demoted.
        assert_eq!(t.replica(&"a".into()).unwrap().state, LifecycleState::Active);
    }

    #[test]
    fn target_lost_during_handover_is_stale() {
        let mut t = topology();
        let (exec, _) = execute_swap(&command(SwapReason::Fault), 100, &mut t, &SwapConfig::default(), 3).unwrap();
        t.apply(&"b".into(), LifecycleEvent::AnomalyFlagged, 3).unwrap();
        assert!(matches!(complete_swap(&exec, &mut t, 3), Err(SwapError::StaleCommand { .. })));
    }

    #[test]
    fn heal_schedule_under_defaults() {
        let mut t = topology();
        t.apply(&"a".into(), LifecycleEvent::BlacklistConfirmed, 3).unwrap();
        let (job, tr) = schedule_heal(&"a".into(), 1000, &mut t, &HealingConfig::default()).unwrap();
        assert_eq!(tr.to, LifecycleState::Healing);
        assert_eq!((job.reboot_until, job.reconfigure_until, job.test_until), (1200, 1250, 1300));
        assert_eq!(t.replica(&"a".into()).unwrap().heal_attempts, 1);
    }

    #[test]
    fn exhausted_budget_retires() {
        let mut t = topology();
        t.apply(&"a".into(), LifecycleEvent::BlacklistConfirmed, 3).unwrap();
        t.replica_mut(&"a".into()).unwrap().heal_attempts = 3;
        let err = schedule_heal(&"a".into(), 1000, &mut t, &HealingConfig::default()).unwrap_err();
        assert!(matches!(err, HealError::AttemptsExhausted { .. }));
        assert_eq!(t.replica(&"a".into()).unwrap().state, LifecycleState::Retired);
    }

    #[test]
    fn concurrent_heals_are_independent() {
        let mut t = topology();
        t.apply(&"a".into(), LifecycleEvent::BlacklistConfirmed, 3).unwrap();
        t.apply(&"c".into(), LifecycleEvent::BlacklistConfirmed, 3).unwrap();
        let cfg = HealingConfig::default();
        let (ja, _) = schedule_heal(&"a".into(), 1000, &mut t, &cfg).unwrap();
        let (jc, _) = schedule_heal(&"c".into(), 1010, &mut t, &cfg).unwrap();
        finish_reconfigure(&ja, &mut t, &cfg).unwrap();
        assert_eq!(t.replica(&"c".into()).unwrap().state, LifecycleState::Healing);
        let out = resolve_test(&ja, ja.test_until, &[FaultTruth { healable: false }]).unwrap();
        record_test(&ja, out, &mut t, &cfg).unwrap();
        assert_eq!(t.replica(&"a".into()).unwrap().state, LifecycleState::Blacklisted);
        finish_reconfigure(&jc, &mut t, &cfg).unwrap();
        let out = resolve_test(&jc, jc.test_until, &[]).unwrap();
        record_test(&jc, out, &mut t, &cfg).unwrap();
        assert_eq!(t.replica(&"c".into()).unwrap().state, LifecycleState::Standby);
    }

    #[test]
    fn test_outcomes_follow_fault_class() {
        let job = HealingJob {
            replica: "a".into(),
            attempt: 1,
            started: 0,
            reboot_until: 200,
            reconfigure_until: 250,
            test_until: 300,
            outcome: None,
        };
        assert_eq!(resolve_test(&job, 300, &[FaultTruth { healable: true }]), Ok(TestOutcome::Pass));
        assert_eq!(resolve_test(&job, 300, &[FaultTruth { healable: false }]), Ok(TestOutcome::Fail));
        assert_eq!(resolve_test(&job, 300, &[]), Ok(TestOutcome::Pass));
        assert!(matches!(resolve_test(&job, 299, &[]), Err(HealError::NotDue { .. })));
    }
}
