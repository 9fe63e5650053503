//! Injected faults and their effect on component ground truth.

use serde::{Deserialize, Serialize};

use crate::ids::ComponentRef;
use crate::probes::ComponentTruth;
use crate::scalar::{unit_clamp, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    /// Latency rises linearly by `magnitude` over the fault's duration.
    LatencyDrift,
    /// Error rate pinned at `magnitude`.
    ErrorBurst,
    /// Throughput scaled by `1 − magnitude`.
    ThroughputDroop,
    /// Correlated error burst across several colocated targets.
    GremlinBurst,
    /// Throughput zero, error rate one, forever.
    PermanentCrash,
    /// Latency pinned at `deadline · (1 + magnitude)`.
    DeadlineCreep,
}

impl FaultClass {
    pub fn healable(self) -> bool {
        self != Self::PermanentCrash
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec<T = f64> {
    pub targets: Vec<ComponentRef>,
    pub class: FaultClass,
    pub onset: u64,
    #[serde(default)]
    pub magnitude: T,
    /// Ticks the fault lasts; absent means permanent.
    #[serde(default)]
    pub duration: Option<u64>,
}

impl<T: Scalar> FaultSpec<T> {
    pub fn healable(&self) -> bool {
        self.class.healable()
    }

    /// First tick the fault no longer applies, if it ever stops.
    pub fn end(&self) -> Option<u64> {
        self.duration.map(|d| self.onset + d)
    }

    pub fn active_at(&self, tick: u64) -> bool {
        tick >= self.onset && self.end().is_none_or(|end| tick < end)
    }

    /// Whether the fault is live at any tick of `[from, to]`.
    pub fn overlaps(&self, from: u64, to: u64) -> bool {
        self.onset <= to && self.end().is_none_or(|end| end > from)
    }
}

/// Applies `fault` to `truth` at `tick`. Outside the fault's active interval the
/// truth is returned unchanged. `deadline_ticks` is only used by deadline creep.
pub fn inject<T: Scalar>(fault: &FaultSpec<T>, truth: &ComponentTruth<T>, tick: u64, deadline_ticks: Option<u64>) -> ComponentTruth<T> {
    let mut out = *truth;
    if !fault.active_at(tick) {
        return out;
    }
    let m = fault.magnitude;
    match fault.class {
        FaultClass::LatencyDrift => {
            let ramp = match fault.duration {
                Some(d) if d > 0 => T::from_u64(tick - fault.onset).expect("fits") / T::from_u64(d).expect("fits"),
                _ => T::one(),
            };
            out.latency_ms = out.latency_ms + m * ramp;
        }
        FaultClass::ErrorBurst | FaultClass::GremlinBurst => {
            out.error_rate = unit_clamp(m);
        }
        FaultClass::ThroughputDroop => {
            out.throughput = out.throughput * (T::one() - m);
        }
        FaultClass::PermanentCrash => {
            out.throughput = T::zero();
            out.error_rate = T::one();
        }
        FaultClass::DeadlineCreep => {
            if let Some(d) = deadline_ticks {
                out.latency_ms = T::from_u64(d).expect("fits") * (T::one() + m);
            }
        }
    }
    out
}
