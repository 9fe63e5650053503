//! The confidence module: turns health assessments into swap commands.
//!
//! Per function, a FAULTY active replica (or one whose host is blacklisted) is
//! swapped for the best certified standby at once. A healthier standby only
//! replaces a working active replica after its efficiency lead has held for
//! `streak` consecutive decision rounds, which keeps noise from causing flapping.
//! UNKNOWN health is treated as "no information": it never triggers a fault swap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ComponentRef, FunctionId, ReplicaId};
use crate::integrity::{Health, HealthAssessment};
use crate::model::{LifecycleState, Topology};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapReason {
    Fault,
    Efficiency,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demotion {
    pub replica: ReplicaId,
    pub reason: SwapReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCommand {
    pub tick: u64,
    pub function: FunctionId,
    /// Absent when the function has no ACTIVE replica to hand over from.
    pub demote: Option<Demotion>,
    pub promote: ReplicaId,
    pub expected_latency: u64,
}

impl SwapCommand {
    pub fn reason(&self) -> SwapReason {
        self.demote.as_ref().map_or(SwapReason::Fault, |d| d.reason)
    }
}

/// Per-function efficiency floors. Every function demands exactly one ACTIVE replica.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandTable<T = f64> {
    pub floors: BTreeMap<FunctionId, T>,
}

impl<T: Scalar> DemandTable<T> {
    pub fn floor(&self, function: &FunctionId) -> T {
        self.floors.get(function).copied().unwrap_or_else(T::zero)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HysteresisPolicy<T = f64> {
    /// Required efficiency lead of the best standby over the active replica.
    pub delta: T,
    /// Consecutive rounds the lead must hold.
    pub streak: u32,
}

impl<T: Scalar> Default for HysteresisPolicy<T> {
    fn default() -> Self {
        Self {
            delta: T::lit(0.1),
            streak: 3,
        }
    }
}

/// Returns the new streak and whether an efficiency swap is permitted this round.
pub fn update_hysteresis<T: Scalar>(streak: u32, margin: T, policy: &HysteresisPolicy<T>) -> (u32, bool) {
    let next = if margin >= policy.delta { streak + 1 } else { 0 };
    (next, next >= policy.streak)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T = f64> {
    pub replica: ReplicaId,
    pub function: FunctionId,
    pub efficiency: T,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub assigned: BTreeMap<FunctionId, ReplicaId>,
    pub uncovered: Vec<FunctionId>,
}

/// Greedy one-replica-per-function assignment by descending efficiency.
///
/// A replica is only compatible with its own function and must meet that
/// function's floor. Ties go to the lexicographically smallest replica id.
pub fn mediate_supply_demand<T: Scalar>(certified: &[Candidate<T>], functions: &[FunctionId], demand: &DemandTable<T>) -> Assignment {
    let wanted: BTreeSet<&FunctionId> = functions.iter().collect();
    let mut pool: Vec<&Candidate<T>> = certified
        .iter()
        .filter(|c| wanted.contains(&c.function) && c.efficiency >= demand.floor(&c.function))
        .collect();
    pool.sort_by(|a, b| {
        b.efficiency
            .partial_cmp(&a.efficiency)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.replica.cmp(&b.replica))
    });

    let mut out = Assignment::default();
    let mut used: BTreeSet<&ReplicaId> = BTreeSet::new();
    for c in pool {
        if out.assigned.contains_key(&c.function) || used.contains(&c.replica) {
            continue;
        }
        used.insert(&c.replica);
        out.assigned.insert(c.function.clone(), c.replica.clone());
    }
    let mut uncovered: Vec<FunctionId> = wanted.into_iter().filter(|f| !out.assigned.contains_key(*f)).cloned().collect();
    uncovered.sort();
    out.uncovered = uncovered;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradedReason {
    /// The active replica is faulty or on a blacklisted host and nothing can replace it.
    ActiveUnfit,
    /// The function has no active replica and nothing can be promoted.
    NoActive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum DecisionNote {
    DegradedMode { function: FunctionId, reason: DegradedReason },
    UnknownHealth { function: FunctionId, replica: ReplicaId },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decision {
    pub commands: Vec<SwapCommand>,
    pub notes: Vec<DecisionNote>,
    pub streaks: BTreeMap<FunctionId, u32>,
}

/// Everything [`decide`] reads besides the assessments and topology.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionContext<'a, T = f64> {
    pub tick: u64,
    pub demand: &'a DemandTable<T>,
    pub policy: &'a HysteresisPolicy<T>,
    pub streaks: &'a BTreeMap<FunctionId, u32>,
    /// Functions with a handover still in progress; they are left alone this round.
    pub in_flight: &'a BTreeSet<FunctionId>,
    pub swap_latency: u64,
}

/// Standbys that may be promoted, with the efficiency they would be ranked by.
pub fn promotion_candidates<T: Scalar>(assessments: &[HealthAssessment<T>], topology: &Topology<T>) -> Vec<Candidate<T>> {
    let by_target: BTreeMap<&ComponentRef, &HealthAssessment<T>> = assessments.iter().map(|a| (&a.target, a)).collect();
    topology
        .replicas
        .iter()
        .filter(|r| r.state == LifecycleState::Standby && r.certified && !topology.host_blacklisted(&r.id))
        .filter_map(|r| {
            let efficiency = match by_target.get(&ComponentRef::Replica(r.id.clone())) {
                Some(a) if matches!(a.health, Health::Faulty | Health::Degraded) => return None,
                Some(a) if a.health == Health::Healthy => a.efficiency_estimate,
                _ => r.efficiency_score,
            };
            Some(Candidate {
                replica: r.id.clone(),
                function: r.function.clone(),
                efficiency,
            })
        })
        .collect()
}

pub fn decide<T: Scalar>(assessments: &[HealthAssessment<T>], topology: &Topology<T>, ctx: &DecisionContext<'_, T>) -> Decision {
    let by_target: BTreeMap<&ComponentRef, &HealthAssessment<T>> = assessments.iter().map(|a| (&a.target, a)).collect();
    let candidates = promotion_candidates(assessments, topology);
    let mut functions: Vec<FunctionId> = topology.functions.iter().map(|f| f.id.clone()).collect();
    functions.sort();
    let assignment = mediate_supply_demand(&candidates, &functions, ctx.demand);
    let efficiency_of = |id: &ReplicaId| {
        candidates
            .iter()
            .find(|c| &c.replica == id)
            .map(|c| c.efficiency)
            .unwrap_or_else(T::zero)
    };

    let mut decision = Decision {
        streaks: ctx.streaks.clone(),
        ..Decision::default()
    };
    for function in functions {
        if ctx.in_flight.contains(&function) {
            continue;
        }
        let Ok(active) = topology.active_replica(&function) else {
            continue;
        };
        let best = assignment.assigned.get(&function);
        let command = |demote: Option<Demotion>, promote: &ReplicaId| SwapCommand {
            tick: ctx.tick,
            function: function.clone(),
            demote,
            promote: promote.clone(),
            expected_latency: ctx.swap_latency,
        };

        let Some(active) = active else {
            decision.streaks.insert(function.clone(), 0);
            match best {
                Some(best) => decision.commands.push(command(None, best)),
                None => decision.notes.push(DecisionNote::DegradedMode {
                    function: function.clone(),
                    reason: DegradedReason::NoActive,
                }),
            }
            continue;
        };

        let assessment = by_target.get(&ComponentRef::Replica(active.clone()));
        let health = assessment.map(|a| a.health);
        if health == Some(Health::Faulty) || topology.host_blacklisted(active) {
            decision.streaks.insert(function.clone(), 0);
            match best {
                Some(best) => decision.commands.push(command(
                    Some(Demotion {
                        replica: active.clone(),
                        reason: SwapReason::Fault,
                    }),
                    best,
                )),
                None => decision.notes.push(DecisionNote::DegradedMode {
                    function: function.clone(),
                    reason: DegradedReason::ActiveUnfit,
                }),
            }
            continue;
        }

        let Some(assessment) = assessment.filter(|a| a.health != Health::Unknown) else {
            decision.streaks.insert(function.clone(), 0);
            decision.notes.push(DecisionNote::UnknownHealth {
                function: function.clone(),
                replica: active.clone(),
            });
            continue;
        };

        let streak = ctx.streaks.get(&function).copied().unwrap_or(0);
        let margin = best.map_or(T::neg_infinity(), |b| efficiency_of(b) - assessment.efficiency_estimate);
        let (next, permit) = update_hysteresis(streak, margin, ctx.policy);
        match best {
            Some(best) if permit => {
                decision.streaks.insert(function.clone(), 0);
                decision.commands.push(command(
                    Some(Demotion {
                        replica: active.clone(),
                        reason: SwapReason::Efficiency,
                    }),
                    best,
                ));
            }
            _ => {
                decision.streaks.insert(function.clone(), next);
            }
        }
    }
    decision
}
