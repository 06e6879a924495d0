use std::process::Command;

use huddle_core::modes::Mode;
use huddle_sim::fuzz::generate;
use huddle_sim::{check_invariants, run_scenario, Trace};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Roundtable), Just(Mode::Peripheral), Just(Mode::Breakout)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Seeds far outside the acceptance range behave the same way.
    #[test]
    fn arbitrary_seeds_run_clean(seed in any::<u64>(), mode in mode()) {
        let scenario = generate(seed, mode);
        let trace = run_scenario(&scenario).unwrap();
        prop_assert!(trace.violations().is_empty(), "{:?}", trace.violations());
        // Dangling triggers are reported as script errors, which is not a
        // protocol failure.
    }

    #[test]
    fn trace_files_read_back_to_the_same_entries(seed in 0u64..10_000, mode in mode()) {
        let trace = run_scenario(&generate(seed, mode)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        trace.write(&path).unwrap();
        let entries = Trace::read_entries(&path).unwrap();
        prop_assert_eq!(&entries, &trace.entries);
        prop_assert!(check_invariants(&entries, trace.outcome.horizon_ms, None).is_empty());
    }
}

fn simulate(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_simulate")).args(args).output().unwrap()
}

#[test]
fn cli_runs_checks_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/invocation.scenario.json");
    let trace = dir.path().join("trace.jsonl");
    let out = simulate(&["run", scenario.to_str().unwrap(), "--out", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = simulate(&["check", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let out = simulate(&["fuzz", "--mode", "peripheral", "--seeds", "0..4"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["runs"], 5);

    let out = simulate(&["check", dir.path().join("missing.jsonl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
