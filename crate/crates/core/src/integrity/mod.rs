//! The integrity module.
//!
//! Once per window it decides which probe streams on each target are
//! trustworthy, runs the detectors on trusted data only, tracks how many
//! consecutive windows each finding has fired, and emits one
//! [`HealthAssessment`] per in-scope component. Nothing here reads ground truth:
//! the output is a function of the telemetry records, the window scope and the
//! persistence counters carried from earlier windows.

pub mod assessment;
pub mod detectors;
pub mod stats;
pub mod trust;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use assessment::{assemble_assessment, efficiency_estimate, AnomalyFinding, FindingKind, Health, HealthAssessment};
pub use detectors::{
    detect_rule_based, detect_statistical_peer, Comparator, ComponentKind, Detector, InsufficientPeers, PeerDetector,
    PeerScore, RawFinding, RuleDetector, ThresholdRule, WindowView,
};
pub use trust::{assess_stream_validity, ProbeWindow, TrustStatus, TrustVerdict};

use crate::ids::{ComponentRef, FunctionId, ProbeId, ReplicaId};
use crate::model::Topology;
use crate::probes::{Metric, MetricMap, TelemetryRecord};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrityConfig<T = f64> {
    /// Window length in ticks.
    pub window: u64,
    /// Consecutive flagged windows before a finding is persistent.
    pub persistence: u32,
    /// Robust z-score threshold for the peer detector.
    pub tau: T,
    /// Agreement tolerance between probes (absolute below 1, relative above).
    pub tolerance: T,
    pub rules: Vec<ThresholdRule<T>>,
    pub statistical_metrics: Vec<Metric>,
    /// Peer outliers closer than this to the peer median are not flagged.
    pub min_deviation: MetricMap<T>,
}

impl<T: Scalar> Default for IntegrityConfig<T> {
    fn default() -> Self {
        Self {
            window: 20,
            persistence: 3,
            tau: T::lit(3.5),
            tolerance: T::lit(0.05),
            rules: vec![
                ThresholdRule::new(Metric::ErrorRate, Comparator::Gt, T::lit(0.1)),
                ThresholdRule {
                    applies_to: Some(ComponentKind::Replica),
                    ..ThresholdRule::new(Metric::Throughput, Comparator::Lt, T::lit(50.0))
                },
            ],
            statistical_metrics: vec![Metric::LatencyMs, Metric::ErrorRate, Metric::Throughput],
            min_deviation: [
                (Metric::LatencyMs, T::lit(2.0)),
                (Metric::ErrorRate, T::lit(0.02)),
                (Metric::Throughput, T::lit(5.0)),
            ]
            .into_iter()
            .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TargetInfo<T = f64> {
    pub deadline_ticks: Option<u64>,
    pub nominal_throughput: Option<T>,
}

/// Which components are assessed this window and which replicas are compared as peers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowScope<T = f64> {
    pub targets: BTreeMap<ComponentRef, TargetInfo<T>>,
    pub peer_groups: BTreeMap<FunctionId, Vec<ReplicaId>>,
}

impl<T: Scalar> WindowScope<T> {
    /// In-service replicas (grouped by function) plus every platform.
    pub fn from_topology(topology: &Topology<T>) -> Self {
        let mut scope = Self::default();
        for r in topology.replicas.iter().filter(|r| r.state.in_service()) {
            let function = topology.function(&r.function);
            scope.targets.insert(
                ComponentRef::Replica(r.id.clone()),
                TargetInfo {
                    deadline_ticks: function.map(|f| f.deadline_ticks),
                    nominal_throughput: function.map(|f| f.nominal_throughput),
                },
            );
            scope.peer_groups.entry(r.function.clone()).or_default().push(r.id.clone());
        }
        for vm in &topology.vm_platforms {
            scope.targets.insert(ComponentRef::Vm(vm.id.clone()), TargetInfo::default());
        }
        for hw in &topology.hardware_platforms {
            scope.targets.insert(ComponentRef::Hardware(hw.id.clone()), TargetInfo::default());
        }
        scope
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome<T = f64> {
    pub window_end: u64,
    pub verdicts: BTreeMap<ComponentRef, Vec<TrustVerdict<T>>>,
    pub assessments: Vec<HealthAssessment<T>>,
}

impl<T: Scalar> WindowOutcome<T> {
    pub fn assessment(&self, target: &ComponentRef) -> Option<&HealthAssessment<T>> {
        self.assessments.iter().find(|a| &a.target == target)
    }
}

type StreakKey = (ComponentRef, Metric, FindingKind);

pub struct Integrity<T: Scalar = f64> {
    config: IntegrityConfig<T>,
    detectors: Vec<Box<dyn Detector<T>>>,
    streaks: BTreeMap<StreakKey, u32>,
}

impl<T: Scalar> Integrity<T> {
    /// Rule and peer-comparison detectors, configured from `config`.
    pub fn new(config: IntegrityConfig<T>) -> Self {
        let detectors: Vec<Box<dyn Detector<T>>> = vec![
            Box::new(RuleDetector { rules: config.rules.clone() }),
            Box::new(PeerDetector {
                tau: config.tau,
                metrics: config.statistical_metrics.clone(),
                min_deviation: config.min_deviation.clone(),
            }),
        ];
        Self {
            config,
            detectors,
            streaks: BTreeMap::new(),
        }
    }

    pub fn with_detector(mut self, detector: Box<dyn Detector<T>>) -> Self {
        self.detectors.push(detector);
        self
    }

    pub fn config(&self) -> &IntegrityConfig<T> {
        &self.config
    }

    pub fn assess_window(&mut self, window_end: u64, records: &[TelemetryRecord<T>], scope: &WindowScope<T>) -> WindowOutcome<T> {
        let mut by_target: BTreeMap<&ComponentRef, BTreeMap<&ProbeId, Vec<TelemetryRecord<T>>>> =
            scope.targets.keys().map(|t| (t, BTreeMap::new())).collect();
        for rec in records {
            if let Some(probes) = by_target.get_mut(&rec.target) {
                probes.entry(&rec.probe).or_default().push(rec.clone());
            }
        }

        let mut verdicts = BTreeMap::new();
        let mut means: BTreeMap<ComponentRef, MetricMap<T>> = BTreeMap::new();
        for (target, probes) in by_target {
            let windows: Vec<ProbeWindow<T>> = probes
                .into_iter()
                .map(|(probe, records)| ProbeWindow { probe: probe.clone(), records })
                .collect();
            let vs = assess_stream_validity(&windows, self.config.tolerance);
            let trusted: Vec<MetricMap<T>> = windows
                .iter()
                .zip(&vs)
                .filter(|(_, v)| v.status == TrustStatus::Trusted)
                .filter_map(|(w, _)| trust::window_means(&w.records))
                .collect();
            if !trusted.is_empty() {
                means.insert(target.clone(), average(&trusted));
            }
            verdicts.insert(target.clone(), vs);
        }

        let view = WindowView {
            window_end,
            means: &means,
            peer_groups: &scope.peer_groups,
        };
        let mut raw: Vec<RawFinding<T>> = self.detectors.iter().flat_map(|d| d.detect(&view)).collect();
        raw.sort_by(|a, b| (&a.target, a.metric, a.kind).cmp(&(&b.target, b.metric, b.kind)));

        let flagged: BTreeSet<StreakKey> = raw.iter().map(|f| (f.target.clone(), f.metric, f.kind)).collect();
        self.streaks.retain(|key, _| flagged.contains(key) || (scope.targets.contains_key(&key.0) && !means.contains_key(&key.0)));
        for key in &flagged {
            *self.streaks.entry(key.clone()).or_insert(0) += 1;
        }

        let findings: Vec<AnomalyFinding<T>> = raw
            .into_iter()
            .map(|f| {
                let streak = self.streaks[&(f.target.clone(), f.metric, f.kind)];
                AnomalyFinding {
                    persistent: streak >= self.config.persistence,
                    target: f.target,
                    metric: f.metric,
                    window_end,
                    score: f.score,
                    kind: f.kind,
                }
            })
            .collect();

        let efficiency: BTreeMap<ComponentRef, T> = means
            .iter()
            .map(|(target, m)| {
                let info = &scope.targets[target];
                (target.clone(), efficiency_estimate(m, info.deadline_ticks, info.nominal_throughput))
            })
            .collect();
        let assessments = assemble_assessment(window_end, &verdicts, &findings, &efficiency);
        WindowOutcome {
            window_end,
            verdicts,
            assessments,
        }
    }
}

/// Per-metric mean across probes, each probe weighted equally.
fn average<T: Scalar>(maps: &[MetricMap<T>]) -> MetricMap<T> {
    let mut sums: BTreeMap<Metric, (T, usize)> = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            let e = sums.entry(*k).or_insert((T::zero(), 0));
            e.0 = e.0 + *v;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s / T::from_usize(n).expect("count fits scalar")))
        .collect()
}
