//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Runs with `harness = false` so the pass/fail lines are always printed.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hotswap_core::confidence::{self, DecisionContext, DemandTable, HysteresisPolicy, SwapReason};
use hotswap_core::ids::{ComponentRef, FunctionId, ReplicaId};
use hotswap_core::integrity::stats::{robust_z_scores, score_sentinel, ROBUST_Z_CONSTANT};
use hotswap_core::integrity::{Health, HealthAssessment, TrustStatus};
use hotswap_core::model::{
    FunctionRole, HardwarePlatform, LifecycleEvent, LifecycleState, Replica, Topology, VmPlatform,
};
use hotswap_core::probes::{substitute_glass, BoxType};
use hotswap_core::rng::stream;
use hotswap_core::sim::{parse_scenario, run, to_jsonl, EventKind, RunOutput, Scenario, SimEvent};
use hotswap_core::swapexec::{
    complete_swap, execute_swap, finish_reconfigure, record_test, schedule_heal, HealError, HealingConfig, SwapConfig,
    SwapError, SwapExecution, TestOutcome,
};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_scenario(&text).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn shipped() -> Vec<String> {
    let dir = format!("{}/../../scenarios", env!("CARGO_MANIFEST_DIR"));
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .expect("scenarios directory")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    names.sort();
    names
}

fn execute(s: &Scenario) -> RunOutput {
    run(s).unwrap_or_else(|e| panic!("{}: {e}", s.name))
}

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn transitions_of<'a>(events: &'a [SimEvent], replica: &'a str) -> impl Iterator<Item = (usize, &'a SimEvent, LifecycleEvent, LifecycleState)> + 'a {
    events.iter().enumerate().filter_map(move |(i, e)| match &e.event {
        EventKind::Lifecycle { transition, .. } if transition.replica.as_str() == replica => Some((i, e, transition.event, transition.to)),
        _ => None,
    })
}

fn criterion_1_clean_run() -> Outcome {
    let s = scenario("clean");
    check(s.ticks == 10_000 && s.faults.is_empty() && s.topology.replicas.len() == 3, "clean scenario shape")?;
    let started = Instant::now();
    let out = execute(&s);
    let elapsed = started.elapsed();
    let m = &out.metrics;
    check(m.swap_count.total == 0, format!("swap_count {}", m.swap_count.total))?;
    check(m.availability.values().all(|a| *a == 1.0), format!("availability {:?}", m.availability))?;
    let findings: usize = out.windows.iter().flat_map(|w| &w.assessments).map(|a| a.findings.len()).sum();
    check(findings == 0 && m.findings == 0, format!("{findings} findings"))?;
    check(elapsed < Duration::from_secs(1), format!("runtime {elapsed:?}"))?;
    Ok(format!("swaps 0, availability 1.0, findings 0, runtime {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

fn criterion_2_terminal_failover() -> Outcome {
    let s = scenario("crash");
    let out = execute(&s);
    let m = &out.metrics;
    let w = s.detector.window;
    let p = u64::from(s.detector.persistence);
    check(m.swap_count.fault == 1 && m.swap_count.total == 1, format!("swaps {:?}", m.swap_count))?;
    let latency = m.detections[0].latency.ok_or("crash never detected")?;
    check(latency <= w * p, format!("detection latency {latency} > {}", w * p))?;
    let bound = 1.0 - (w * p + s.swap.latency) as f64 / s.ticks as f64;
    let availability = m.availability[&FunctionId::from("nav")];
    check(availability >= bound, format!("availability {availability} < {bound}"))?;
    check(m.final_states[&ReplicaId::from("r1")] == LifecycleState::Retired, "r1 not retired")?;
    let heals = out
        .events
        .iter()
        .filter(|e| matches!(&e.event, EventKind::HealScheduled { job } if job.replica.as_str() == "r1"))
        .count();
    let failed = out
        .events
        .iter()
        .filter(|e| matches!(&e.event, EventKind::TestResolved { replica, outcome: TestOutcome::Fail, .. } if replica.as_str() == "r1"))
        .count();
    let max = s.healing.max_attempts as usize;
    check(heals == max && failed == max, format!("{heals} heals, {failed} failed tests, budget {max}"))?;
    Ok(format!("1 fault swap, detection {latency} <= {}, availability {availability} >= {bound}, r1 RETIRED after {max} failed tests", w * p))
}

fn criterion_3_heal_loop() -> Outcome {
    let s = scenario("latency-drift");
    let out = execute(&s);
    let fault = &s.faults[0];
    let target = ComponentRef::replica("r1");
    let w = s.detector.window;
    let m = u64::from(s.detector.persistence);

    let flagged: Vec<(u64, bool)> = out
        .events
        .iter()
        .filter_map(|e| match &e.event {
            EventKind::Assessment { assessment } if assessment.target == target && e.tick >= fault.onset && !assessment.findings.is_empty() => {
                Some((e.tick, assessment.findings.iter().any(|f| f.persistent)))
            }
            _ => None,
        })
        .collect();
    let crossing = flagged.first().map(|f| f.0).ok_or("drift never crossed the detector threshold")?;
    let persistent = flagged.iter().find(|f| f.1).map(|f| f.0).ok_or("no persistent flag")?;
    check(persistent <= crossing + (m - 1) * w, format!("crossing {crossing}, persistent {persistent}"))?;

    let swapped = out.events.iter().any(|e| {
        matches!(&e.event, EventKind::SwapStarted { execution }
            if execution.command.reason() == SwapReason::Fault
                && execution.command.demote.as_ref().is_some_and(|d| d.replica.as_str() == "r1"))
    });
    check(swapped, "no fault swap of r1")?;

    let steps: Vec<(usize, LifecycleEvent, LifecycleState)> = transitions_of(&out.events, "r1").map(|(i, _, ev, to)| (i, ev, to)).collect();
    let find = |ev: LifecycleEvent, after: usize| steps.iter().find(|(i, e, _)| *e == ev && *i > after).map(|s| (s.0, s.2));
    let (b, _) = find(LifecycleEvent::BlacklistConfirmed, 0).ok_or("no blacklist_confirmed")?;
    let (h, _) = find(LifecycleEvent::HealStarted, b).ok_or("no heal_started after blacklist")?;
    let (c, _) = find(LifecycleEvent::HealComplete, h).ok_or("no heal_complete after heal_started")?;
    let (t, to) = find(LifecycleEvent::TestPassed, c).ok_or("no test_passed after heal_complete")?;
    check(to == LifecycleState::Standby, format!("test_passed led to {to}"))?;
    check(b < h && h < c && c < t, "order")?;
    Ok(format!(
        "crossing at {crossing}, persistent at {persistent}; blacklist @{} < heal @{} < complete @{} < test_passed @{} -> STANDBY",
        out.events[b].tick, out.events[h].tick, out.events[c].tick, out.events[t].tick
    ))
}

fn criterion_4_probe_corruption() -> Outcome {
    let s = scenario("stuck-probe");
    let corrupted = s.probes.iter().find(|p| p.corruption.is_some()).ok_or("no corrupted probe")?;
    let onset = corrupted.corruption.as_ref().map(|c| c.onset()).unwrap_or(0);
    let on_target = s.probes.iter().filter(|p| p.target == corrupted.target).count();
    check(on_target == 3, format!("{on_target} probes on the target"))?;
    let out = execute(&s);
    let distrusted = out
        .events
        .iter()
        .find_map(|e| match &e.event {
            EventKind::TrustChanged { probe, to: TrustStatus::Distrusted, .. } if *probe == corrupted.id => Some(e.tick),
            _ => None,
        })
        .ok_or("corrupted probe never distrusted")?;
    let w = s.detector.window;
    check(distrusted >= onset && distrusted < onset + w, format!("distrusted at {distrusted}, onset {onset}"))?;
    let m = &out.metrics;
    check(m.false_swap_count == 0 && m.swap_count.total == 0 && s.ticks == 10_000, format!("false swaps {}, swaps {}", m.false_swap_count, m.swap_count.total))?;
    Ok(format!("{} DISTRUSTED at tick {distrusted} (onset {onset}), false swaps 0, swaps 0", corrupted.id))
}

fn criterion_5_no_flap() -> Outcome {
    let s = scenario("no-flap");
    let out = execute(&s);
    let delta = s.policy.hysteresis.delta;
    let mut widest: f64 = 0.0;
    for w in &out.windows {
        let effs: Vec<f64> = w
            .assessments
            .iter()
            .filter(|a| a.target.as_replica().is_some() && a.health == Health::Healthy)
            .map(|a| a.efficiency_estimate)
            .collect();
        check(effs.len() == 2, format!("window {} has {} healthy replicas", w.window_end, effs.len()))?;
        let diff = (effs[0] - effs[1]).abs();
        check(diff < delta, format!("efficiency difference {diff} >= delta at {}", w.window_end))?;
        widest = widest.max(diff);
    }
    let swaps = out.metrics.swap_count.efficiency;
    check(swaps == 0 && s.ticks == 10_000, format!("{swaps} efficiency swaps"))?;
    Ok(format!("max efficiency difference {widest:.4} < {delta}, efficiency swaps 0"))
}

fn criterion_6_determinism() -> Outcome {
    let names = shipped();
    let mut runs: Vec<Scenario> = names.iter().map(|n| scenario(n)).collect();
    let extra: Vec<Scenario> = runs.iter().take(20usize.saturating_sub(runs.len())).map(|s| s.clone().with_seed(s.seed + 1)).collect();
    runs.extend(extra);
    check(runs.len() == 20, format!("only {} runs available", runs.len()))?;
    let started = Instant::now();
    for s in &runs {
        let a = to_jsonl(&execute(s).events);
        let b = to_jsonl(&execute(s).events);
        check(a == b, format!("{} seed {} differs between runs", s.name, s.seed))?;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("{} scenarios, 20 runs x 2 byte-identical in {:.1} s", names.len(), elapsed.as_secs_f64()))
}

/// k-th smallest value (0-based), found by counting ranks rather than sorting.
fn order_statistic(values: &[i64], k: usize) -> i64 {
    *values
        .iter()
        .find(|&&v| {
            let below = values.iter().filter(|&&x| x < v).count();
            let at_or_below = values.iter().filter(|&&x| x <= v).count();
            below <= k && k < at_or_below
        })
        .expect("some value holds every rank")
}

/// Twice the median, so it stays an integer.
fn doubled_median(values: &[i64]) -> i64 {
    let n = values.len();
    if n % 2 == 1 {
        2 * order_statistic(values, n / 2)
    } else {
        order_statistic(values, n / 2 - 1) + order_statistic(values, n / 2)
    }
}

fn oracle_z(values: &[i64]) -> Vec<f64> {
    let med2 = doubled_median(values);
    let dev2: Vec<i64> = values.iter().map(|v| (2 * v - med2).abs()).collect();
    let mad4 = doubled_median(&dev2);
    dev2.iter()
        .map(|&d2| {
            let dev = d2 as f64 / 2.0;
            let mad = mad4 as f64 / 4.0;
            if mad4 > 0 {
                ROBUST_Z_CONSTANT * dev / mad
            } else if d2 == 0 {
                0.0
            } else {
                score_sentinel::<f64>()
            }
        })
        .collect()
}

fn criterion_7_detector_oracle() -> Outcome {
    let mut rng = stream(7, "acceptance:oracle");
    for case in 0..10_000 {
        let n = rng.gen_range(1..=6);
        let ints: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=20)).collect();
        let floats: Vec<f64> = ints.iter().map(|v| *v as f64).collect();
        let got = robust_z_scores(&floats).ok_or("empty input")?;
        let want = oracle_z(&ints);
        let same = got.iter().zip(&want).all(|(g, w)| g.to_bits() == w.to_bits());
        check(same && got.len() == want.len(), format!("case {case} {ints:?}: got {got:?}, oracle {want:?}"))?;
    }
    Ok("10000 sampled integer vectors match the brute-force oracle bit for bit".into())
}

/// A small random topology: one or two functions with two to four replicas each.
fn random_topology<R: Rng>(rng: &mut R) -> Topology<f64> {
    let hosts = rng.gen_range(2..=4);
    let mut topo = Topology {
        hardware_platforms: (0..hosts).map(|i| HardwarePlatform { id: format!("hw{i}").as_str().into(), blacklisted: false }).collect(),
        vm_platforms: (0..hosts)
            .map(|i| VmPlatform { id: format!("vm{i}").as_str().into(), hardware: format!("hw{i}").as_str().into(), blacklisted: false })
            .collect(),
        replicas: Vec::new(),
        functions: Vec::new(),
    };
    for f in 0..rng.gen_range(1..=2) {
        let fid = format!("f{f}");
        topo.functions.push(FunctionRole { id: fid.as_str().into(), name: fid.clone(), deadline_ticks: 50, nominal_throughput: 100.0 });
        for r in 0..rng.gen_range(2..=4) {
            let state = if r == 0 { LifecycleState::Active } else { LifecycleState::Standby };
            topo.replicas.push(Replica::new(format!("{fid}r{r}"), fid.clone(), format!("vm{}", rng.gen_range(0..hosts)), state));
        }
    }
    topo
}

#[derive(Default)]
struct FuzzTally {
    steps: u64,
    swaps: u64,
    stale: u64,
    heals: u64,
    retired: u64,
}

/// Drives one topology through `steps` decision rounds exactly as the engine's callers
/// would, with random health, random test outcomes and random swap latency.
fn fuzz_sequence<R: Rng>(rng: &mut R, steps: usize, tally: &mut FuzzTally) -> Result<(), String> {
    let mut topo = random_topology(rng);
    let heal_cfg = HealingConfig { reboot: 1, reconfigure: 1, test: 1, max_attempts: rng.gen_range(1..=3) };
    let max = heal_cfg.max_attempts;
    let demand = DemandTable::default();
    let policy = HysteresisPolicy { delta: 0.1, streak: rng.gen_range(1..=3) };
    let mut streaks = BTreeMap::new();
    let mut in_flight: Vec<SwapExecution> = Vec::new();
    let mut jobs = BTreeMap::new();
    let mut retired: BTreeSet<ReplicaId> = BTreeSet::new();
    let healths = [Health::Healthy, Health::Healthy, Health::Degraded, Health::Faulty, Health::Unknown];

    for step in 0..steps as u64 {
        tally.steps += 1;
        let done: Vec<SwapExecution> = in_flight.iter().filter(|s| s.handover_complete <= step).cloned().collect();
        in_flight.retain(|s| s.handover_complete > step);
        for execution in done {
            match complete_swap(&execution, &mut topo, max) {
                Ok(_) => {}
                Err(SwapError::StaleCommand { .. }) => tally.stale += 1,
                Err(SwapError::Model(e)) => return Err(format!("complete_swap: {e}")),
            }
        }

        let assessments: Vec<HealthAssessment<f64>> = topo
            .replicas
            .iter()
            .filter(|r| r.state.in_service())
            .map(|r| HealthAssessment {
                tick: step,
                target: ComponentRef::Replica(r.id.clone()),
                health: *healths.choose(rng).expect("non-empty"),
                findings: Vec::new(),
                efficiency_estimate: rng.gen_range(0.0..=1.0),
            })
            .collect();
        let busy: BTreeSet<FunctionId> = in_flight.iter().map(|s| s.command.function.clone()).collect();
        let swap_cfg = SwapConfig { latency: rng.gen_range(0..=2), warm_handover: rng.gen_bool(0.5) };
        let ctx = DecisionContext { tick: step, demand: &demand, policy: &policy, streaks: &streaks, in_flight: &busy, swap_latency: swap_cfg.latency };
        let decision = confidence::decide(&assessments, &topo, &ctx);
        streaks = decision.streaks;
        for command in &decision.commands {
            match execute_swap(command, step, &mut topo, &swap_cfg, max) {
                Ok((execution, _)) => {
                    tally.swaps += 1;
                    if swap_cfg.latency > 0 {
                        in_flight.push(execution);
                    }
                }
                Err(SwapError::StaleCommand { .. }) => tally.stale += 1,
                Err(SwapError::Model(e)) => return Err(format!("execute_swap {command:?}: {e}")),
            }
        }

        for a in &assessments {
            let id = a.target.as_replica().expect("replica assessments only");
            let state = topo.replica(id).expect("known").state;
            let event = match (state, a.health) {
                (LifecycleState::Standby | LifecycleState::Suspect, Health::Faulty) => LifecycleEvent::BlacklistConfirmed,
                (LifecycleState::Standby, Health::Degraded) => LifecycleEvent::AnomalyFlagged,
                (LifecycleState::Suspect, Health::Healthy) => LifecycleEvent::SuspicionCleared,
                _ => continue,
            };
            topo.apply(id, event, max).map_err(|e| format!("{event:?} on {id}: {e}"))?;
        }

        let ids: Vec<ReplicaId> = topo.replicas.iter().map(|r| r.id.clone()).collect();
        for id in ids {
            match topo.replica(&id).expect("known").state {
                LifecycleState::Blacklisted => match schedule_heal(&id, step, &mut topo, &heal_cfg) {
                    Ok((job, _)) => {
                        tally.heals += 1;
                        jobs.insert(id.clone(), job);
                    }
                    Err(HealError::AttemptsExhausted { .. }) => {}
                    Err(e) => return Err(format!("schedule_heal {id}: {e}")),
                },
                LifecycleState::Healing => {
                    finish_reconfigure(&jobs[&id], &mut topo, &heal_cfg).map_err(|e| format!("finish_reconfigure {id}: {e}"))?;
                }
                LifecycleState::Testing => {
                    let outcome = if rng.gen_bool(0.5) { TestOutcome::Pass } else { TestOutcome::Fail };
                    record_test(&jobs[&id], outcome, &mut topo, &heal_cfg).map_err(|e| format!("record_test {id}: {e}"))?;
                }
                _ => {}
            }
        }

        for f in &topo.functions {
            if let Err(e) = topo.active_replica(&f.id) {
                return Err(format!("step {step}: {e}"));
            }
        }
        for r in &topo.replicas {
            if retired.contains(&r.id) && r.state != LifecycleState::Retired {
                return Err(format!("{} left RETIRED", r.id));
            }
            if r.state == LifecycleState::Retired && retired.insert(r.id.clone()) {
                tally.retired += 1;
            }
        }
    }
    Ok(())
}

fn criterion_8_lifecycle_fuzz() -> Outcome {
    let mut rng = stream(8, "acceptance:fuzz");
    let mut tally = FuzzTally::default();
    for seq in 0..100_000 {
        let steps = rng.gen_range(1..=24);
        fuzz_sequence(&mut rng, steps, &mut tally).map_err(|e| format!("sequence {seq}: {e}"))?;
    }
    check(tally.swaps > 0 && tally.heals > 0 && tally.retired > 0, "fuzz never exercised swaps, heals and retirement")?;
    Ok(format!(
        "100000 sequences, {} rounds, {} swaps, {} stale, {} heals, {} retirements; no illegal transition, no multiple ACTIVE",
        tally.steps, tally.swaps, tally.stale, tally.heals, tally.retired
    ))
}

fn criterion_9_glass_substitution() -> Outcome {
    let clean = scenario("clean");
    let probes = &clean.probes;
    check(probes.iter().any(|p| p.box_type == BoxType::Black), "clean scenario has no BLACK probe")?;
    let substituted = substitute_glass(probes, 0.5, &mut stream(clean.seed, "glass"));
    check(substituted.iter().all(|p| p.box_type != BoxType::Black), "BLACK probe survived")?;
    for (before, after) in probes.iter().zip(&substituted) {
        if before.box_type == BoxType::White {
            check(before == after, format!("WHITE probe {} changed", before.id))?;
        }
    }

    let baseline = execute(&clean);
    let mut glass = clean.clone();
    glass.glass_substitution = Some(hotswap_core::sim::scenario::GlassSubstitution { gray_fraction: 0.5 });
    let upgraded = execute(&glass);
    check(upgraded.probes.iter().all(|p| p.box_type != BoxType::Black), "engine kept a BLACK probe")?;
    check(baseline.windows.len() == upgraded.windows.len(), "window count differs")?;
    for (a, b) in baseline.windows.iter().zip(&upgraded.windows) {
        let view = |w: &hotswap_core::integrity::WindowOutcome<f64>| -> Vec<(ComponentRef, Health, usize)> {
            w.assessments.iter().map(|x| (x.target.clone(), x.health, x.findings.len())).collect()
        };
        check(view(a) == view(b), format!("window {} detection differs", a.window_end))?;
    }
    let glass_count = upgraded.probes.iter().filter(|p| p.box_type == BoxType::Glass).count();
    Ok(format!("{glass_count} probes upgraded to GLASS, no BLACK left, WHITE unchanged, detection identical over {} windows", baseline.windows.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("clean run", criterion_1_clean_run),
        ("terminal-malfunction failover", criterion_2_terminal_failover),
        ("chronic-degradation heal loop", criterion_3_heal_loop),
        ("probe-corruption resilience", criterion_4_probe_corruption),
        ("no-flap", criterion_5_no_flap),
        ("determinism", criterion_6_determinism),
        ("detector oracle", criterion_7_detector_oracle),
        ("lifecycle safety fuzz", criterion_8_lifecycle_fuzz),
        ("glass-box substitution", criterion_9_glass_substitution),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {} [PASS] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} [FAIL] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
