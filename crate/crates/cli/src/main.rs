use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hotswap_core::sim::{
    compute_metrics, metrics_json, parse_scenario, read_jsonl, render_summary, run_with, write_jsonl, RunError, RunOptions,
    RunOutput, Scenario, ScenarioError,
};
use log::info;

/// Deterministic simulator for peer-replicated components with hot swap and autonomous healing.
#[derive(Parser, Debug)]
#[command(name = "hotswap", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario file; silent on success.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario and write events.jsonl, metrics.json, summary.txt and assessments.jsonl.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Run seed; defaults to the scenario's own seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Batch mode: run every seed in `a..b` (or `a..=b`), each into `<out>/seed-<n>`.
        #[arg(long, value_parser = parse_seed_range)]
        seeds: Option<SeedRange>,
        /// Override the scenario's run length.
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every probe sample to telemetry.jsonl.
        #[arg(long)]
        telemetry: bool,
    },
    /// Recompute metrics from an event log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Write the metrics here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct SeedRange {
    start: u64,
    end: u64,
}

fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected a..b or a..=b, got `{s}`"));
    };
    let start: u64 = a.trim().parse().map_err(|e| format!("bad range start `{a}`: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end `{b}`: {e}"))?;
    let end = if inclusive { b + 1 } else { b };
    if end <= start {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(SeedRange { start, end })
}

enum Failure {
    Invalid(String),
    Io(String),
    Violation(String),
}

impl Failure {
    /// Prints the message and returns the exit code.
    fn report(&self) -> u8 {
        let (message, code) = match self {
            Failure::Io(m) => (m, 1),
            Failure::Invalid(m) => (m, 2),
            Failure::Violation(m) => (m, 3),
        };
        eprintln!("hotswap: {message}");
        code
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_scenario(&text).map_err(|e| match e {
        ScenarioError::Parse { .. } | ScenarioError::Validation(_) => Failure::Invalid(format!("{}: {e}", path.display())),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_outputs(dir: &Path, output: &RunOutput, telemetry: bool) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut events = Vec::new();
    write_jsonl(&output.events, &mut events).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("events.jsonl"), &events)?;
    write_file(&dir.join("metrics.json"), metrics_json(&output.metrics).as_bytes())?;
    write_file(&dir.join("summary.txt"), render_summary(&output.metrics).as_bytes())?;

    let mut assessments = Vec::new();
    for window in &output.windows {
        for a in &window.assessments {
            serde_json::to_writer(&mut assessments, a).expect("assessment serializes");
            assessments.push(b'\n');
        }
    }
    write_file(&dir.join("assessments.jsonl"), &assessments)?;

    if telemetry {
        let mut records = Vec::new();
        for r in &output.telemetry {
            serde_json::to_writer(&mut records, r).expect("record serializes");
            records.push(b'\n');
        }
        write_file(&dir.join("telemetry.jsonl"), &records)?;
    }
    Ok(())
}

fn run_one(scenario: &Scenario, dir: &Path, telemetry: bool) -> Result<(), Failure> {
    let options = RunOptions { record_telemetry: telemetry };
    match run_with(scenario, options) {
        Ok(output) => {
            write_outputs(dir, &output, telemetry)?;
            print!("{}", render_summary(&output.metrics));
            Ok(())
        }
        Err(RunError::ProtocolViolation { tick, message, partial }) => {
            write_outputs(dir, &partial, telemetry)?;
            Err(Failure::Violation(format!(
                "protocol violation at tick {tick}: {message} (partial log in {})",
                dir.display()
            )))
        }
        Err(RunError::Invalid(e)) => Err(Failure::Invalid(e.to_string())),
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { scenario } => load_scenario(&scenario).map(|_| ()),
        Command::Run {
            scenario,
            seed,
            seeds,
            ticks,
            out,
            telemetry,
        } => {
            let mut base = load_scenario(&scenario)?;
            if let Some(ticks) = ticks {
                base = base.with_ticks(ticks);
                base.validate().map_err(|e| Failure::Invalid(format!("{}: {e}", scenario.display())))?;
            }
            match seeds {
                None => {
                    let s = match seed {
                        Some(seed) => base.with_seed(seed),
                        None => base,
                    };
                    run_one(&s, &out, telemetry)
                }
                Some(range) => {
                    // Run every seed even if one fails; exit with the most severe failure.
                    let mut failed = 0;
                    let mut worst = 0;
                    for seed in range.start..range.end {
                        info!("batch: seed {seed}");
                        let dir = out.join(format!("seed-{seed}"));
                        if let Err(f) = run_one(&base.clone().with_seed(seed), &dir, telemetry) {
                            failed += 1;
                            worst = worst.max(f.report());
                        }
                    }
                    let message = format!("{failed} of {} seeds failed", range.end - range.start);
                    match worst {
                        0 => Ok(()),
                        1 => Err(Failure::Io(message)),
                        2 => Err(Failure::Invalid(message)),
                        _ => Err(Failure::Violation(message)),
                    }
                }
            }
        }
        Command::Report { log, scenario, out } => {
            let scenario = load_scenario(&scenario)?;
            let file = fs::File::open(&log).map_err(|e| io_err(&log, e))?;
            let events = read_jsonl(BufReader::new(file)).map_err(|e| Failure::Invalid(format!("{}: {e}", log.display())))?;
            let report = compute_metrics(&events, &scenario).map_err(|e| Failure::Invalid(format!("{}: {e}", log.display())))?;
            let json = metrics_json(&report);
            match out {
                Some(path) => write_file(&path, json.as_bytes()),
                None => io::stdout()
                    .write_all(json.as_bytes())
                    .map_err(|e| Failure::Io(format!("stdout: {e}"))),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("HOTSWAP_LOG_LEVEL")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => ExitCode::from(f.report()),
    }
}
