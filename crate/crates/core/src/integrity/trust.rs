//! Cross-probe agreement: which probe streams on one target can be believed.
//!
//! Probes agree when every metric they both report has window means within the
//! tolerance. The largest group of mutually agreeing probes is trusted if it holds
//! a strict majority; everyone outside it is distrusted. No strict majority, or two
//! equally large majority groups, leaves every probe unresolved.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::ProbeId;
use crate::probes::{MetricMap, TelemetryRecord};
use crate::scalar::Scalar;

/// Upper bound on probes per target; agreement cliques are found by exhaustive search.
pub const MAX_PROBES_PER_TARGET: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustStatus {
    Trusted,
    Distrusted,
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustVerdict<T = f64> {
    pub probe: ProbeId,
    pub status: TrustStatus,
    /// Fraction of the other probes this one agrees with.
    pub evidence: T,
}

/// One probe's records for one target over one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeWindow<T = f64> {
    pub probe: ProbeId,
    pub records: Vec<TelemetryRecord<T>>,
}

/// Per-metric mean over the records; `None` for an empty window.
pub fn window_means<T: Scalar>(records: &[TelemetryRecord<T>]) -> Option<MetricMap<T>> {
    if records.is_empty() {
        return None;
    }
    let mut sums: BTreeMap<_, (T, usize)> = BTreeMap::new();
    for rec in records {
        for (m, v) in &rec.metrics {
            let e = sums.entry(*m).or_insert((T::zero(), 0));
            e.0 = e.0 + *v;
            e.1 += 1;
        }
    }
    Some(
        sums.into_iter()
            .map(|(m, (sum, n))| (m, sum / T::from_usize(n).expect("count fits scalar")))
            .collect(),
    )
}

/// Tolerance is absolute below magnitude 1 and relative above it.
pub fn values_agree<T: Scalar>(a: T, b: T, tolerance: T) -> bool {
    let scale = T::one().max(a.abs()).max(b.abs());
    (a - b).abs() <= tolerance * scale
}

pub fn means_agree<T: Scalar>(a: &MetricMap<T>, b: &MetricMap<T>, tolerance: T) -> bool {
    a.iter()
        .filter_map(|(m, va)| b.get(m).map(|vb| (*va, *vb)))
        .all(|(va, vb)| values_agree(va, vb, tolerance))
}

pub fn assess_stream_validity<T: Scalar>(windows: &[ProbeWindow<T>], tolerance: T) -> Vec<TrustVerdict<T>> {
    let means: Vec<Option<MetricMap<T>>> = windows.iter().map(|w| window_means(&w.records)).collect();
    let live: Vec<usize> = (0..windows.len()).filter(|i| means[*i].is_some()).collect();
    let n = live.len();

    let unresolved = |i: usize| TrustVerdict {
        probe: windows[i].probe.clone(),
        status: TrustStatus::Unresolved,
        evidence: T::zero(),
    };
    if n == 0 || n > MAX_PROBES_PER_TARGET {
        return (0..windows.len()).map(unresolved).collect();
    }

    let mut agree = vec![vec![true; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let ok = means_agree(
                means[live[a]].as_ref().expect("live"),
                means[live[b]].as_ref().expect("live"),
                tolerance,
            );
            agree[a][b] = ok;
            agree[b][a] = ok;
        }
    }
    let evidence: Vec<T> = (0..n)
        .map(|a| {
            if n == 1 {
                T::one()
            } else {
                let k = (0..n).filter(|b| *b != a && agree[a][*b]).count();
                T::from_usize(k).expect("fits") / T::from_usize(n - 1).expect("fits")
            }
        })
        .collect();

    // Largest clique, and whether it is unique.
    let mut best: Option<u32> = None;
    let mut best_size = 0u32;
    let mut tied = false;
    for mask in 1u32..(1u32 << n) {
        let size = mask.count_ones();
        if size < best_size {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let is_clique = members
            .iter()
            .enumerate()
            .all(|(k, a)| members[k + 1..].iter().all(|b| agree[*a][*b]));
        if !is_clique {
            continue;
        }
        if size > best_size {
            best = Some(mask);
            best_size = size;
            tied = false;
        } else {
            tied = true;
        }
    }

    let majority = best.filter(|_| !tied && 2 * best_size as usize > n);
    let mut verdicts: Vec<TrustVerdict<T>> = (0..windows.len()).map(unresolved).collect();
    for (k, idx) in live.iter().enumerate() {
        let status = match majority {
            Some(mask) if mask & (1 << k) != 0 => TrustStatus::Trusted,
            Some(_) => TrustStatus::Distrusted,
            None => TrustStatus::Unresolved,
        };
        verdicts[*idx].status = status;
        verdicts[*idx].evidence = evidence[k];
    }
    verdicts
}
