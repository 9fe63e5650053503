use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trust::{TrustStatus, TrustVerdict};
use crate::ids::ComponentRef;
use crate::probes::{Metric, MetricMap};
use crate::scalar::{unit_clamp, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Rule,
    Statistical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFinding<T = f64> {
    pub target: ComponentRef,
    pub metric: Metric,
    pub window_end: u64,
    pub score: T,
    pub kind: FindingKind,
    /// Set once the same (target, metric, kind) has been flagged for `persistence` consecutive windows.
    pub persistent: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    Degraded,
    Faulty,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthAssessment<T = f64> {
    pub tick: u64,
    pub target: ComponentRef,
    pub health: Health,
    pub findings: Vec<AnomalyFinding<T>>,
    pub efficiency_estimate: T,
}

/// Product of the latency headroom, success rate and relative throughput subscores,
/// each clamped to `[0, 1]`. Subscores whose inputs are missing count as 1.
///
/// Latency is compared against the deadline on the tick scale (one tick per millisecond).
pub fn efficiency_estimate<T: Scalar>(means: &MetricMap<T>, deadline_ticks: Option<u64>, nominal_throughput: Option<T>) -> T {
    let mut eff = T::one();
    if let (Some(latency), Some(deadline)) = (means.get(&Metric::LatencyMs), deadline_ticks) {
        let d = T::from_u64(deadline).expect("deadline fits scalar");
        eff = eff * unit_clamp((d - *latency) / d);
    }
    if let Some(err) = means.get(&Metric::ErrorRate) {
        eff = eff * unit_clamp(T::one() - *err);
    }
    if let (Some(tp), Some(nominal)) = (means.get(&Metric::Throughput), nominal_throughput) {
        if nominal > T::zero() {
            eff = eff * unit_clamp(*tp / nominal);
        }
    }
    unit_clamp(eff)
}

/// Turns trust verdicts and findings into one assessment per target in `verdicts`.
///
/// A target with no trusted probe is UNKNOWN regardless of findings; otherwise any
/// persistent finding makes it FAULTY and any other finding DEGRADED.
pub fn assemble_assessment<T: Scalar>(
    window_end: u64,
    verdicts: &BTreeMap<ComponentRef, Vec<TrustVerdict<T>>>,
    findings: &[AnomalyFinding<T>],
    efficiency: &BTreeMap<ComponentRef, T>,
) -> Vec<HealthAssessment<T>> {
    verdicts
        .iter()
        .map(|(target, vs)| {
            let covered = vs.iter().any(|v| v.status == TrustStatus::Trusted);
            let own: Vec<AnomalyFinding<T>> = if covered {
                findings.iter().filter(|f| &f.target == target).cloned().collect()
            } else {
                Vec::new()
            };
            let health = if !covered {
                Health::Unknown
            } else if own.iter().any(|f| f.persistent) {
                Health::Faulty
            } else if !own.is_empty() {
                Health::Degraded
            } else {
                Health::Healthy
            };
            let efficiency_estimate = if covered {
                efficiency.get(target).copied().map(unit_clamp).unwrap_or_else(T::one)
            } else {
                T::zero()
            };
            HealthAssessment {
                tick: window_end,
                target: target.clone(),
                health,
                findings: own,
                efficiency_estimate,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ProbeId;

    fn verdict(status: TrustStatus) -> TrustVerdict<f64> {
        TrustVerdict { probe: ProbeId::new("p"), status, evidence: 1.0 }
    }

    fn finding(persistent: bool) -> AnomalyFinding<f64> {
        AnomalyFinding {
            target: ComponentRef::replica("r1"),
            metric: Metric::LatencyMs,
            window_end: 60,
            score: 1.0,
            kind: FindingKind::Rule,
            persistent,
        }
    }

    fn single(status: TrustStatus, findings: &[AnomalyFinding<f64>]) -> HealthAssessment<f64> {
        let verdicts = [(ComponentRef::replica("r1"), vec![verdict(status)])].into_iter().collect();
        assemble_assessment(60, &verdicts, findings, &BTreeMap::new()).remove(0)
    }

    #[test]
    fn persistent_finding_is_faulty() {
        assert_eq!(single(TrustStatus::Trusted, &[finding(true)]).health, Health::Faulty);
    }

    #[test]
    fn transient_finding_is_degraded() {
        assert_eq!(single(TrustStatus::Trusted, &[finding(false)]).health, Health::Degraded);
    }

    #[test]
    fn no_trusted_coverage_is_unknown() {
        let a = single(TrustStatus::Distrusted, &[finding(true)]);
        assert_eq!(a.health, Health::Unknown);
        assert!(a.findings.is_empty());
        assert_eq!(single(TrustStatus::Unresolved, &[]).health, Health::Unknown);
    }

    #[test]
    fn efficiency_of_nominal_replica() {
        let means: MetricMap<f64> =
            [(Metric::LatencyMs, 10.0), (Metric::ErrorRate, 0.0), (Metric::Throughput, 100.0)].into_iter().collect();
        assert!((efficiency_estimate(&means, Some(50), Some(100.0)) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn crashed_replica_has_zero_efficiency() {
        let means: MetricMap<f64> = [(Metric::ErrorRate, 1.0), (Metric::Throughput, 0.0)].into_iter().collect();
        assert_eq!(efficiency_estimate(&means, Some(50), Some(100.0)), 0.0);
    }

    #[test]
    fn efficiency_clamps_overdue_latency() {
        let means: MetricMap<f64> = [(Metric::LatencyMs, 90.0)].into_iter().collect();
        assert_eq!(efficiency_estimate(&means, Some(50), None), 0.0);
    }
}
