//! Box-typed diagnostic probes.
//!
//! A probe samples the ground truth of one component, adds observation noise,
//! applies its own corruption if it has one, and finally drops every metric its
//! box type cannot see. Corruption never touches the truth it reads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ComponentRef, ProbeId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LatencyMs,
    ErrorRate,
    Throughput,
    CpuLoad,
    TemperatureProxy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Self::LatencyMs,
        Self::ErrorRate,
        Self::Throughput,
        Self::CpuLoad,
        Self::TemperatureProxy,
    ];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::LatencyMs => "latency_ms",
            Self::ErrorRate => "error_rate",
            Self::Throughput => "throughput",
            Self::CpuLoad => "cpu_load",
            Self::TemperatureProxy => "temperature_proxy",
        };
        f.write_str(s)
    }
}

pub type MetricMap<T = f64> = BTreeMap<Metric, T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxType {
    /// Platform level only; application internals are shielded.
    Black,
    /// Application level, source known.
    White,
    /// A mix of both.
    Gray,
    /// Fully disclosed specifications; sees everything.
    Glass,
}

/// Metric names a probe of the given box type may report.
pub fn visibility(box_type: BoxType) -> BTreeSet<Metric> {
    use Metric::*;
    let metrics: &[Metric] = match box_type {
        BoxType::White => &[LatencyMs, ErrorRate, Throughput],
        BoxType::Black => &[CpuLoad, TemperatureProxy],
        BoxType::Gray => &[LatencyMs, CpuLoad, ErrorRate],
        BoxType::Glass => &Metric::ALL,
    };
    metrics.iter().copied().collect()
}

/// What a component is really doing at one tick. Only the simulator sees this.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTruth<T = f64> {
    pub latency_ms: T,
    pub error_rate: T,
    pub throughput: T,
    pub cpu_load: T,
    pub temperature_proxy: T,
}

impl<T: Scalar> ComponentTruth<T> {
    pub fn get(&self, metric: Metric) -> T {
        match metric {
            Metric::LatencyMs => self.latency_ms,
            Metric::ErrorRate => self.error_rate,
            Metric::Throughput => self.throughput,
            Metric::CpuLoad => self.cpu_load,
            Metric::TemperatureProxy => self.temperature_proxy,
        }
    }

    pub fn set(&mut self, metric: Metric, value: T) {
        match metric {
            Metric::LatencyMs => self.latency_ms = value,
            Metric::ErrorRate => self.error_rate = value,
            Metric::Throughput => self.throughput = value,
            Metric::CpuLoad => self.cpu_load = value,
            Metric::TemperatureProxy => self.temperature_proxy = value,
        }
    }
}

impl<T: Scalar> Default for ComponentTruth<T> {
    fn default() -> Self {
        Self {
            latency_ms: T::lit(10.0),
            error_rate: T::zero(),
            throughput: T::lit(100.0),
            cpu_load: T::lit(0.3),
            temperature_proxy: T::lit(0.4),
        }
    }
}

/// How a probe misreports once `onset` is reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeCorruption<T = f64> {
    /// Adds `offset` to one metric.
    Bias { onset: u64, metric: Metric, offset: T },
    /// Reports `value` for one metric, or for every metric when `metric` is absent.
    Stuck {
        onset: u64,
        #[serde(default)]
        metric: Option<Metric>,
        value: T,
    },
    /// Scales the observation noise by `factor`.
    NoiseAmplify { onset: u64, factor: T },
}

impl<T: Scalar> ProbeCorruption<T> {
    pub fn onset(&self) -> u64 {
        match self {
            Self::Bias { onset, .. } | Self::Stuck { onset, .. } | Self::NoiseAmplify { onset, .. } => *onset,
        }
    }

    pub fn active_at(&self, tick: u64) -> bool {
        tick >= self.onset()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe<T = f64> {
    pub id: ProbeId,
    #[serde(rename = "box")]
    pub box_type: BoxType,
    pub target: ComponentRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<ProbeCorruption<T>>,
}

impl<T: Scalar> Probe<T> {
    pub fn new(id: impl Into<String>, box_type: BoxType, target: ComponentRef) -> Self {
        Self {
            id: ProbeId::new(id),
            box_type,
            target,
            corruption: None,
        }
    }

    pub fn with_corruption(mut self, corruption: ProbeCorruption<T>) -> Self {
        self.corruption = Some(corruption);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord<T = f64> {
    pub tick: u64,
    pub probe: ProbeId,
    pub target: ComponentRef,
    pub metrics: MetricMap<T>,
}

/// Zero-mean uniform observation noise, given as a half-width per metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseConfig<T = f64>(pub MetricMap<T>);

impl<T: Scalar> NoiseConfig<T> {
    pub fn half_width(&self, metric: Metric) -> T {
        self.0.get(&metric).copied().unwrap_or_else(T::zero)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("probe {probe} target {target} is retired; probe detached")]
    TargetRetired { probe: ProbeId, target: ComponentRef },
}

fn sanitize<T: Scalar>(metric: Metric, v: T) -> T {
    match metric {
        Metric::ErrorRate => crate::scalar::unit_clamp(v),
        _ if v.is_nan() => T::zero(),
        _ => v.max(T::zero()),
    }
}

/// Takes one observation of `truth`.
///
/// Exactly one uniform draw per metric is taken from `rng` on every call, whatever
/// the box type or corruption, so a probe's stream position depends only on how
/// many ticks it has sampled.
pub fn sample<T: Scalar, R: Rng + ?Sized>(
    probe: &Probe<T>,
    truth: &ComponentTruth<T>,
    target_retired: bool,
    tick: u64,
    noise: &NoiseConfig<T>,
    rng: &mut R,
) -> Result<TelemetryRecord<T>, ProbeError> {
    if target_retired {
        return Err(ProbeError::TargetRetired {
            probe: probe.id.clone(),
            target: probe.target.clone(),
        });
    }
    let corruption = probe.corruption.as_ref().filter(|c| c.active_at(tick));
    let amplify = match corruption {
        Some(ProbeCorruption::NoiseAmplify { factor, .. }) => *factor,
        _ => T::one(),
    };

    let mut values: MetricMap<T> = MetricMap::new();
    for metric in Metric::ALL {
        let u: f64 = rng.gen_range(-1.0..=1.0);
        let deviation = T::lit(u) * noise.half_width(metric) * amplify;
        values.insert(metric, truth.get(metric) + deviation);
    }

    match corruption {
        Some(ProbeCorruption::Bias { metric, offset, .. }) => {
            if let Some(v) = values.get_mut(metric) {
                *v = *v + *offset;
            }
        }
        Some(ProbeCorruption::Stuck { metric: Some(metric), value, .. }) => {
            values.insert(*metric, *value);
        }
        Some(ProbeCorruption::Stuck { metric: None, value, .. }) => {
            values.values_mut().for_each(|v| *v = *value);
        }
        _ => {}
    }

    let visible = visibility(probe.box_type);
    let metrics = values
        .into_iter()
        .filter(|(m, _)| visible.contains(m))
        .map(|(m, v)| (m, sanitize(m, v)))
        .collect();
    Ok(TelemetryRecord {
        tick,
        probe: probe.id.clone(),
        target: probe.target.clone(),
        metrics,
    })
}

/// Replaces every BLACK probe by a GLASS probe on the same target, and each GRAY
/// probe with probability `gray_fraction`. One draw is taken per GRAY probe, in order.
pub fn substitute_glass<T: Scalar, R: Rng + ?Sized>(probes: &[Probe<T>], gray_fraction: f64, rng: &mut R) -> Vec<Probe<T>> {
    probes
        .iter()
        .map(|p| {
            let replace = match p.box_type {
                BoxType::Black => true,
                BoxType::Gray => rng.gen::<f64>() < gray_fraction,
                BoxType::White | BoxType::Glass => false,
            };
            let mut out = p.clone();
            if replace {
                out.box_type = BoxType::Glass;
            }
            out
        })
        .collect()
}
