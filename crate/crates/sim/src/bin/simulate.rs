use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use huddle_core::log::{read_log, verify_replay};
use huddle_core::modes::Mode;
use huddle_sim::fuzz::fuzz;
use huddle_sim::{check_invariants, run_scenario, Scenario, Trace};

#[derive(Parser)]
#[command(name = "simulate", about = "Run, fuzz and check huddle sessions offline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run generated scenarios for a range of seeds and check invariants.
    Fuzz {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Inclusive range such as `0..99`, or a single seed.
        #[arg(long, default_value = "0..99")]
        seeds: String,
    },
    /// Replay room event logs and confirm they reproduce themselves.
    Replay { logs: Vec<PathBuf> },
    /// Check invariants over an existing trace file.
    Check {
        trace: PathBuf,
        #[arg(long, default_value_t = huddle_sim::scenario::DEFAULT_HORIZON_MS)]
        horizon_ms: i64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Roundtable,
    Peripheral,
    Breakout,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Roundtable => Mode::Roundtable,
            ModeArg::Peripheral => Mode::Peripheral,
            ModeArg::Breakout => Mode::Breakout,
        }
    }
}

fn parse_seeds(raw: &str) -> Result<std::ops::RangeInclusive<u64>, String> {
    let bad = |_| format!("bad seed range {raw:?}");
    match raw.split_once("..") {
        Some((a, b)) => Ok(a.parse().map_err(bad)?..=b.trim_start_matches('=').parse().map_err(bad)?),
        None => {
            let n = raw.parse().map_err(bad)?;
            Ok(n..=n)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let trace = run_scenario(&s)?;
            match out {
                Some(path) => trace.write(&path)?,
                None => print!("{}", trace.render()),
            }
            for v in trace.violations() {
                eprintln!("violation: {}", serde_json::to_string(v)?);
            }
            for e in &trace.outcome.script_errors {
                eprintln!("script: {e}");
            }
            Ok(trace.violations().is_empty())
        }
        Command::Fuzz { mode, seeds } => {
            let report = fuzz(parse_seeds(&seeds)?, mode.into())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passed())
        }
        Command::Replay { logs } => {
            let mut ok = true;
            for path in logs {
                match read_log(&path).map_err(|e| e.to_string()).and_then(|r| verify_replay(&r).map_err(|e| e.to_string())) {
                    Ok(room) => println!("{}: ok ({} turns)", path.display(), room.transcript().history().len()),
                    Err(e) => {
                        ok = false;
                        println!("{}: {e}", path.display());
                    }
                }
            }
            Ok(ok)
        }
        Command::Check { trace, horizon_ms } => {
            let entries = Trace::read_entries(&trace)?;
            let violations = check_invariants(&entries, horizon_ms, None);
            for v in &violations {
                println!("{}", serde_json::to_string(v)?);
            }
            Ok(violations.is_empty())
        }
    }
}
