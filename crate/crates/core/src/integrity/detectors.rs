//! Chronic performance problem detectors: threshold rules and peer comparison.
//!
//! Detectors only ever see trusted window means. New detector families plug in
//! through the [`Detector`] trait.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::assessment::FindingKind;
use super::stats::{median, robust_z_scores};
use crate::ids::{ComponentRef, FunctionId, ReplicaId};
use crate::probes::{Metric, MetricMap, TelemetryRecord};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// Violated when the value is strictly greater than the threshold.
    Gt,
    /// Violated when the value is strictly less than the threshold.
    Lt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Replica,
    Vm,
    Hardware,
}

impl ComponentKind {
    pub fn of(component: &ComponentRef) -> Self {
        match component {
            ComponentRef::Replica(_) => Self::Replica,
            ComponentRef::Vm(_) => Self::Vm,
            ComponentRef::Hardware(_) => Self::Hardware,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRule<T = f64> {
    pub metric: Metric,
    pub op: Comparator,
    pub threshold: T,
    /// Restricts the rule to one component kind; applies to all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applies_to: Option<ComponentKind>,
}

impl<T: Scalar> ThresholdRule<T> {
    pub fn new(metric: Metric, op: Comparator, threshold: T) -> Self {
        Self {
            metric,
            op,
            threshold,
            applies_to: None,
        }
    }

    pub fn applies(&self, target: &ComponentRef) -> bool {
        self.applies_to.is_none_or(|k| k == ComponentKind::of(target))
    }

    /// Relative excess over the threshold, or `None` if the rule holds.
    pub fn violation(&self, value: T) -> Option<T> {
        let violated = match self.op {
            Comparator::Gt => value > self.threshold,
            Comparator::Lt => value < self.threshold,
        };
        if !violated {
            return None;
        }
        let excess = (value - self.threshold).abs();
        Some(if self.threshold == T::zero() {
            excess
        } else {
            excess / self.threshold.abs()
        })
    }
}

/// A detector hit before persistence is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFinding<T = f64> {
    pub target: ComponentRef,
    pub metric: Metric,
    pub score: T,
    pub kind: FindingKind,
}

pub fn evaluate_rules<T: Scalar>(target: &ComponentRef, metrics: &MetricMap<T>, rules: &[ThresholdRule<T>]) -> Vec<RawFinding<T>> {
    rules
        .iter()
        .filter(|r| r.applies(target))
        .filter_map(|r| {
            let value = *metrics.get(&r.metric)?;
            r.violation(value).map(|score| RawFinding {
                target: target.clone(),
                metric: r.metric,
                score,
                kind: FindingKind::Rule,
            })
        })
        .collect()
}

/// One finding per violated rule; score is `|value − threshold| / threshold`.
pub fn detect_rule_based<T: Scalar>(record: &TelemetryRecord<T>, rules: &[ThresholdRule<T>]) -> Vec<RawFinding<T>> {
    evaluate_rules(&record.target, &record.metrics, rules)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("peer comparison needs at least 2 trusted peers, got {0}")]
pub struct InsufficientPeers(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerScore<T = f64> {
    pub score: T,
    pub flagged: bool,
}

/// Robust z-score of each peer's window mean; flagged when above `tau`.
pub fn detect_statistical_peer<T: Scalar>(
    window_means: &BTreeMap<ReplicaId, T>,
    tau: T,
) -> Result<BTreeMap<ReplicaId, PeerScore<T>>, InsufficientPeers> {
    if window_means.len() < 2 {
        return Err(InsufficientPeers(window_means.len()));
    }
    let values: Vec<T> = window_means.values().copied().collect();
    let scores = robust_z_scores(&values).expect("non-empty");
    Ok(window_means
        .keys()
        .zip(scores)
        .map(|(id, score)| {
            (
                id.clone(),
                PeerScore {
                    score,
                    flagged: score > tau,
                },
            )
        })
        .collect())
}

/// Trusted per-target window means plus the in-service peer groups, for one window.
pub struct WindowView<'a, T = f64> {
    pub window_end: u64,
    pub means: &'a BTreeMap<ComponentRef, MetricMap<T>>,
    pub peer_groups: &'a BTreeMap<FunctionId, Vec<ReplicaId>>,
}

pub trait Detector<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, view: &WindowView<'_, T>) -> Vec<RawFinding<T>>;
}

#[derive(Clone, Debug)]
pub struct RuleDetector<T = f64> {
    pub rules: Vec<ThresholdRule<T>>,
}

impl<T: Scalar> Detector<T> for RuleDetector<T> {
    fn name(&self) -> &str {
        "rule"
    }

    fn detect(&self, view: &WindowView<'_, T>) -> Vec<RawFinding<T>> {
        view.means
            .iter()
            .flat_map(|(target, metrics)| evaluate_rules(target, metrics, &self.rules))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PeerDetector<T = f64> {
    pub tau: T,
    pub metrics: Vec<Metric>,
    /// Smallest absolute distance from the peer median that may be flagged, per metric.
    /// Keeps near-identical peers (tiny MAD) from being flagged over noise.
    pub min_deviation: MetricMap<T>,
}

impl<T: Scalar> Detector<T> for PeerDetector<T> {
    fn name(&self) -> &str {
        "peer"
    }

    fn detect(&self, view: &WindowView<'_, T>) -> Vec<RawFinding<T>> {
        let mut out = Vec::new();
        for peers in view.peer_groups.values() {
            for metric in &self.metrics {
                let means: BTreeMap<ReplicaId, T> = peers
                    .iter()
                    .filter_map(|id| {
                        let m = view.means.get(&ComponentRef::Replica(id.clone()))?;
                        m.get(metric).map(|v| (id.clone(), *v))
                    })
                    .collect();
                let Ok(scores) = detect_statistical_peer(&means, self.tau) else {
                    continue;
                };
                let values: Vec<T> = means.values().copied().collect();
                let center = median(&values).expect("at least two peers");
                let floor = self.min_deviation.get(metric).copied().unwrap_or_else(T::zero);
                out.extend(scores.into_iter().filter(|(id, s)| s.flagged && (means[id] - center).abs() >= floor).map(|(id, s)| RawFinding {
                    target: ComponentRef::Replica(id),
                    metric: *metric,
                    score: s.score,
                    kind: FindingKind::Statistical,
                }));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ProbeId;

    fn record(latency: f64, error_rate: f64) -> TelemetryRecord<f64> {
        TelemetryRecord {
            tick: 0,
            probe: ProbeId::new("p"),
            target: ComponentRef::replica("r1"),
            metrics: [(Metric::LatencyMs, latency), (Metric::ErrorRate, error_rate)].into_iter().collect(),
        }
    }

    #[test]
    fn latency_rule_scores_relative_excess() {
        let rules = [ThresholdRule::new(Metric::LatencyMs, Comparator::Gt, 20.0)];
        let f = detect_rule_based(&record(25.0, 0.0), &rules);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].score, 0.25);
        assert_eq!(f[0].kind, FindingKind::Rule);
    }

    #[test]
    fn rule_boundary_is_strict() {
        let rules = [ThresholdRule::new(Metric::LatencyMs, Comparator::Gt, 20.0)];
        assert!(detect_rule_based(&record(20.0, 0.0), &rules).is_empty());
    }

    #[test]
    fn zero_error_rate_never_fires() {
        let rules = [
            ThresholdRule::new(Metric::ErrorRate, Comparator::Gt, 0.1),
            ThresholdRule::new(Metric::ErrorRate, Comparator::Gt, 0.001),
        ];
        assert!(detect_rule_based(&record(5.0, 0.0), &rules).is_empty());
    }

    #[test]
    fn rules_respect_component_kind() {
        let mut rule = ThresholdRule::new(Metric::LatencyMs, Comparator::Gt, 20.0);
        rule.applies_to = Some(ComponentKind::Hardware);
        assert!(detect_rule_based(&record(25.0, 0.0), &[rule]).is_empty());
    }

    fn means(values: &[(&str, f64)]) -> BTreeMap<ReplicaId, f64> {
        values.iter().map(|(id, v)| (ReplicaId::from(*id), *v)).collect()
    }

    #[test]
    fn peer_outlier_flagged() {
        let scores = detect_statistical_peer(&means(&[("a", 10.0), ("b", 12.0), ("c", 11.0), ("d", 50.0)]), 3.5).unwrap();
        // median 11.5, MAD 1.0
        assert!((scores[&ReplicaId::from("d")].score - 0.6745 * 38.5).abs() < 1e-12);
        assert!(scores[&ReplicaId::from("d")].flagged);
        for id in ["a", "b", "c"] {
            let s = scores[&ReplicaId::from(id)];
            assert!(s.score <= 1.02 && !s.flagged);
        }
    }

    #[test]
    fn identical_peers_score_zero() {
        let scores = detect_statistical_peer(&means(&[("a", 5.0), ("b", 5.0), ("c", 5.0), ("d", 5.0)]), 3.5).unwrap();
        assert!(scores.values().all(|s| s.score == 0.0 && !s.flagged));
    }

    #[test]
    fn two_peers_score_constant() {
        let scores = detect_statistical_peer(&means(&[("a", 10.0), ("b", 11.0)]), 3.5).unwrap();
        assert!(scores.values().all(|s| s.score == 0.6745 && !s.flagged));
    }

    #[test]
    fn lone_peer_abstains() {
        assert_eq!(detect_statistical_peer(&means(&[("a", 1.0)]), 3.5), Err(InsufficientPeers(1)));
    }
}
