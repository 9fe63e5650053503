use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hotswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hotswap")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn validate_is_silent_on_success() {
    let out = hotswap(&["validate", "--scenario", arg(&scenario("crash"))]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty() && out.stderr.is_empty());
}

#[test]
fn invalid_scenarios_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario("crash")).unwrap()).unwrap();
    doc["detector"]["persistence"] = 1.into();
    std::fs::write(&bad, doc.to_string()).unwrap();
    let out = hotswap(&["validate", "--scenario", arg(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("persistence"));

    std::fs::write(&bad, "{ \"name\": ").unwrap();
    assert_eq!(hotswap(&["validate", "--scenario", arg(&bad)]).status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_code_one() {
    let out = hotswap(&["validate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runs_are_reproducible_and_reports_match() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("crash");
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = hotswap(&["run", "--scenario", arg(&s), "--ticks", "2000", "--out", arg(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("swaps"));
    }
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(dir.path().join("a/events.jsonl")), read(dir.path().join("b/events.jsonl")));
    for f in ["metrics.json", "summary.txt", "assessments.jsonl"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }

    let short = dir.path().join("short.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&s).unwrap()).unwrap();
    doc["ticks"] = 2000.into();
    std::fs::write(&short, doc.to_string()).unwrap();
    let report = dir.path().join("report.json");
    let out = hotswap(&[
        "report",
        "--log",
        arg(&dir.path().join("a/events.jsonl")),
        "--scenario",
        arg(&short),
        "--out",
        arg(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(report), read(dir.path().join("a/metrics.json")));
}

#[test]
fn seed_batches_write_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = hotswap(&[
        "run",
        "--scenario",
        arg(&scenario("noisy-crash")),
        "--seeds",
        "3..=5",
        "--ticks",
        "3000",
        "--out",
        arg(dir.path()),
        "--telemetry",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let logs: Vec<Vec<u8>> = (3..=5)
        .map(|seed| {
            let d = dir.path().join(format!("seed-{seed}"));
            assert!(d.join("telemetry.jsonl").exists());
            std::fs::read(d.join("events.jsonl")).unwrap()
        })
        .collect();
    assert_ne!(logs[0], logs[1]);
}
