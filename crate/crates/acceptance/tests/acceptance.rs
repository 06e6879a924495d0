//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::time::{Duration, Instant};

use huddle_core::backend::{digest_summary, BackendScript, TextScript};
use huddle_core::context::Transcript;
use huddle_core::log::{read_log, render, verify_replay};
use huddle_core::modes::{command_effect, policy_for, AgentLocation, Mode, UserControl};
use huddle_core::room::LogBody;
use huddle_core::wire::WireMessage;
use huddle_core::{EngineAction, EngineEvent, ParticipantId, ProtocolConfig, RequestId, RoomId, Turn, TurnOrigin};
use huddle_ona::network::accumulate_turns;
use huddle_ona::{compare, normalize, project, Accumulation, CodedTurn, OnaNetwork};
use huddle_server::{Client, ServerConfig};
use huddle_sim::fuzz::fuzz;
use huddle_sim::{run_scenario, Scenario};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

const MODES: [Mode; 3] = [Mode::Roundtable, Mode::Peripheral, Mode::Breakout];

fn runner(cases: u32) -> TestRunner {
    let config = Config { failure_persistence: None, ..Config::with_cases(cases) };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- fuzz

fn protocol_invariants() -> Check {
    let started = Instant::now();
    let mut total = 0;
    let mut bad = Vec::new();
    for mode in MODES {
        let report = fuzz(0..=99, mode).map_err(|e| format!("{mode}: {e}"))?;
        total += report.runs;
        for v in report.violations.iter().take(3) {
            bad.push(format!("{mode} seed {}: {} at {}", v.seed, v.violation.invariant, v.violation.t));
        }
        if !report.violations.is_empty() {
            bad.push(format!("{mode}: {} violations in total", report.violations.len()));
        }
    }
    let elapsed = started.elapsed();
    ensure(bad.is_empty(), || bad.join("; "))?;
    ensure(total == 300, || format!("ran {total} scenarios, expected 300"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}, limit 30 s"))?;
    Ok(format!("{total} scenarios, 0 violations, {:.1} s", elapsed.as_secs_f64()))
}

// --------------------------------------------------------- determinism

fn bundled() -> Result<Vec<Scenario>, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../sim/scenarios");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".scenario.json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p).map_err(|e| format!("{}: {e}", p.display()))).collect()
}

fn live_conversation(dir: &Path) -> Result<(), String> {
    let script = dir.join("backend.json");
    let backend = BackendScript {
        candidate: TextScript { fallback: Some("Start with the greenhouse.".into()), ..Default::default() },
        ..Default::default()
    };
    std::fs::write(&script, serde_json_string(&backend)).map_err(|e| e.to_string())?;
    let config = ServerConfig::scripted(dir.join("logs"), Some(script));
    tokio_runtime().block_on(async {
        let srv = huddle_server::start(&config, "127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let url = srv.ws_url();
        let wait = Duration::from_secs(10);
        let e = |e: huddle_server::ClientError| e.to_string();
        Client::connect(&url).await.map_err(e)?.create_session("det", Mode::Roundtable).await.map_err(e)?;
        let mut d1 = Client::join(&url, "det", ParticipantId::human("D1")).await.map_err(e)?;
        let mut d2 = Client::join(&url, "det", ParticipantId::human("D2")).await.map_err(e)?;
        for c in [&mut d1, &mut d2] {
            c.send(&WireMessage::JoinRoom { room: "main".into() }).await.map_err(e)?;
        }
        d1.say("Lisa, what do you think?").await.map_err(e)?;
        d2.wait_for(wait, |m| matches!(m, WireMessage::AgentSpeech { .. })).await.map_err(e)?;
        d2.say("The greenhouse also feeds everyone.").await.map_err(e)?;
        d1.say("Then the gym can wait a year.").await.map_err(e)?;
        tokio::time::sleep(Duration::from_millis(300)).await;
        srv.stop().await.map_err(|e| e.to_string())
    })
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn tokio_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime")
}

fn determinism() -> Check {
    let mut scenarios = bundled()?;
    for mode in MODES {
        for seed in 0..10 {
            scenarios.push(huddle_sim::fuzz::generate(seed, mode));
        }
    }
    let mut room_logs = 0;
    for s in &scenarios {
        let a = run_scenario(s).map_err(|e| e.to_string())?;
        let b = run_scenario(s).map_err(|e| e.to_string())?;
        ensure(a.render() == b.render(), || format!("{:?} seed {}: traces differ", s.mode, s.seed))?;
        for (room, records) in a.room_logs() {
            let rt = verify_replay(&records).map_err(|e| format!("{room}: {e}"))?;
            ensure(render(rt.log()) == render(&records), || format!("{room}: replayed log differs"))?;
            room_logs += 1;
        }
    }

    // Logs written by the live server: read, replay, write again.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    live_conversation(dir.path())?;
    let logs = dir.path().join("logs");
    let again = dir.path().join("again");
    std::fs::create_dir_all(&again).map_err(|e| e.to_string())?;
    let mut files = 0;
    for entry in std::fs::read_dir(&logs).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
        if !name.ends_with(".events.jsonl") {
            continue;
        }
        let records = read_log(&path).map_err(|e| e.to_string())?;
        let rt = verify_replay(&records).map_err(|e| format!("{name}: {e}"))?;
        let second = again.join(&name);
        std::fs::write(&second, render(rt.log())).map_err(|e| e.to_string())?;
        let a = std::fs::read(&path).map_err(|e| e.to_string())?;
        let b = std::fs::read(&second).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name}: second persist differs"))?;
        files += 1;
    }
    ensure(files > 0, || "the server wrote no logs".into())?;
    Ok(format!(
        "{} scenarios byte-identical twice, {room_logs} simulated and {files} server room logs replay to a fixed point",
        scenarios.len()
    ))
}

// ------------------------------------------------------------- context

#[derive(Debug, Clone)]
enum Op {
    Append { agent: bool },
    Answer,
    Fail,
}

fn context_turn(room: &RoomId, seq: u64, agent: bool) -> Turn {
    Turn {
        seq,
        speaker: if agent { ParticipantId::agent("Lisa") } else { ParticipantId::human(format!("D{}", seq % 2 + 1)) },
        room: room.clone(),
        text: format!("point {seq} about the plan"),
        started_at: seq as i64 * 1_000,
        ended_at: seq as i64 * 1_000 + 500,
        origin: if agent { TurnOrigin::Reactive } else { TurnOrigin::HumanSpeech },
    }
}

fn context_case(ops: &[Op]) -> Result<usize, String> {
    let config = ProtocolConfig::default();
    let keep = config.active_context_turns as usize;
    let room = RoomId::main("main");
    let mut t = Transcript::new(room.clone(), &config);
    let mut pending: Option<RequestId> = None;
    let mut all: Vec<Turn> = Vec::new();
    let track = |action: Option<EngineAction>, pending: &mut Option<RequestId>| -> Result<(), String> {
        if let Some(EngineAction::RequestSummary { request_id, .. }) = action {
            ensure(pending.is_none(), || "two summary requests in flight".into())?;
            *pending = Some(request_id);
        }
        Ok(())
    };
    let answer = |t: &mut Transcript, pending: &mut Option<RequestId>| -> Result<Option<EngineAction>, String> {
        match pending.take() {
            Some(id) => {
                let batch = t.batch_for(&id).ok_or("lost batch")?;
                let text = digest_summary(&batch, &t.summary, true);
                t.apply_summary(&id, &text).map_err(|e| e.to_string())
            }
            None => Ok(None),
        }
    };
    for op in ops {
        match op {
            Op::Append { agent } if all.len() < 200 => {
                let turn = context_turn(&room, all.len() as u64 + 1, *agent);
                all.push(turn.clone());
                let action = t.append_turn(turn).map_err(|e| e.to_string())?;
                track(action, &mut pending)?;
                let suffix = &all[all.len() - all.len().min(keep)..];
                ensure(t.active_context().verbatim_turns == suffix, || format!("context is not the suffix at {}", all.len()))?;
            }
            Op::Append { .. } => {}
            Op::Answer => {
                let next = answer(&mut t, &mut pending)?;
                track(next, &mut pending)?;
            }
            Op::Fail => {
                if let Some(id) = pending.take() {
                    t.summary_failed(&id).map_err(|e| e.to_string())?;
                }
            }
        }
    }
    for _ in 0..100 {
        let next = answer(&mut t, &mut pending)?;
        track(next, &mut pending)?;
        let flushed = t.flush();
        track(flushed, &mut pending)?;
        if pending.is_none() && t.pending_summary_buffer.is_empty() {
            break;
        }
    }
    let pruned = all.len().saturating_sub(keep);
    for turn in &all[..pruned] {
        ensure(t.summary.contains(&format!("#{} ", turn.seq)), || format!("pruned turn {} missing from summary", turn.seq))?;
    }
    Ok(all.len())
}

fn context_manager() -> Check {
    let op = prop_oneof![6 => any::<bool>().prop_map(|agent| Op::Append { agent }), 3 => Just(Op::Answer), 1 => Just(Op::Fail)];
    let longest_seen = std::cell::Cell::new(0usize);
    runner(256).run(&prop::collection::vec(op, 0..400), |ops| {
        let n = context_case(&ops).map_err(TestCaseError::fail)?;
        longest_seen.set(longest_seen.get().max(n));
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    // The maximum length is always exercised, not just sampled.
    let full: Vec<Op> = (0..200).map(|i| Op::Append { agent: i % 3 == 0 }).chain([Op::Answer]).collect();
    let longest = longest_seen.get().max(context_case(&full)?);
    ensure(longest == 200, || format!("longest sequence was {longest}"))?;
    Ok("256 random sequences plus a 200-turn run: suffix exact, every pruned turn in the summary".into())
}

// ---------------------------------------------------------- mode table

fn mode_table() -> Check {
    use UserControl::*;
    let expected: Vec<(Mode, AgentLocation, [bool; 4], Vec<UserControl>)> = vec![
        (Mode::Roundtable, AgentLocation::AtTable, [true, true, true, true], vec![]),
        (Mode::Peripheral, AgentLocation::OuterCircle, [false, false, true, false], vec![InviteAgent]),
        (Mode::Peripheral, AgentLocation::AtTable, [true, true, true, true], vec![RemoveAgent]),
        (Mode::Breakout, AgentLocation::Absent, [false, false, false, false], vec![EnterBreakout, CallBackPartner]),
        (Mode::Breakout, AgentLocation::InBreakout { owner: "D1".into() }, [true, true, true, true], vec![ReturnMain]),
    ];
    let locations = [
        AgentLocation::AtTable,
        AgentLocation::OuterCircle,
        AgentLocation::Absent,
        AgentLocation::InBreakout { owner: "D1".into() },
    ];
    let (mut legal, mut illegal) = (0, 0);
    for mode in MODES {
        for loc in &locations {
            let row = expected.iter().find(|(m, l, _, _)| *m == mode && l == loc);
            match (row, policy_for(mode, loc.clone())) {
                (Some((_, _, caps, controls)), Ok(p)) => {
                    let c = p.capabilities;
                    ensure([c.proactive_speech, c.reactive_speech, c.hand_raise, c.hand_raise_ping] == *caps, || {
                        format!("{mode}/{loc:?}: capabilities {c:?}")
                    })?;
                    let want: BTreeSet<_> = controls.iter().copied().collect();
                    ensure(p.user_controls == want, || format!("{mode}/{loc:?}: controls {:?}", p.user_controls))?;
                    for cmd in [InviteAgent, RemoveAgent, EnterBreakout, ReturnMain, CallBackPartner] {
                        let toggle = mode == Mode::Peripheral && matches!(cmd, InviteAgent | RemoveAgent);
                        let allowed = want.contains(&cmd) || toggle;
                        ensure(command_effect(&p, cmd).is_ok() == allowed, || format!("{mode}/{loc:?}: {cmd:?}"))?;
                    }
                    legal += 1;
                }
                (None, Err(_)) => illegal += 1,
                (row, got) => return Err(format!("{mode}/{loc:?}: expected {row:?}, got {got:?}")),
            }
        }
    }
    ensure(legal == 5 && illegal == 7, || format!("{legal} legal, {illegal} illegal"))?;
    Ok("5 legal pairs match, 7 illegal pairs error".into())
}

// ------------------------------------------------------------------ ONA

fn coded(codes: &[BTreeSet<usize>]) -> Vec<CodedTurn> {
    codes
        .iter()
        .enumerate()
        .map(|(i, c)| CodedTurn {
            conversation_id: "c".into(),
            seq: i as u64 + 1,
            speaker: format!("D{}", i % 2 + 1),
            directed_to_agent: false,
            codes: c.clone(),
        })
        .collect()
}

/// Every ordered pair of turns closer than the window, every code pair.
fn enumerate_pairs(turns: &[BTreeSet<usize>], k: usize, window: usize) -> Vec<f64> {
    let mut w = vec![0.0; k * k];
    for later in 0..turns.len() {
        for earlier in later.saturating_sub(window - 1)..later {
            for &a in &turns[earlier] {
                for &b in &turns[later] {
                    w[a * k + b] += 1.0;
                }
            }
        }
    }
    w
}

fn ona_oracle() -> Check {
    let sequences = (1usize..=4)
        .prop_flat_map(|k| (Just(k), prop::collection::vec(prop::collection::btree_set(0..k, 0..=k), 0..=12), 1usize..=5));
    runner(500)
        .run(&sequences, |(k, turns, window)| {
            let net = accumulate_turns("c", &coded(&turns), k, window, Accumulation::Summed).unwrap();
            prop_assert_eq!(net.adjacency, enumerate_pairs(&turns, k, window));
            Ok(())
        })
        .map_err(|e| format!("accumulation: {e}"))?;

    let worked = [BTreeSet::from([0]), BTreeSet::from([1]), BTreeSet::from([0])];
    let net = accumulate_turns("c", &coded(&worked), 2, 4, Accumulation::Summed).map_err(|e| e.to_string())?;
    // Row-major [A->A, A->B, B->A, B->B].
    ensure(net.adjacency == [1.0, 1.0, 1.0, 0.0], || format!("worked example gave {:?}", net.adjacency))?;

    runner(500)
        .run(&prop::collection::vec(0.0f64..1e6, 1..40), |v| {
            let mut n = OnaNetwork::zero("u", 1);
            n.adjacency = v;
            let norm = normalize(&n);
            if !n.is_zero() {
                prop_assert!((norm.norm() - 1.0).abs() < 1e-12);
            }
            Ok(())
        })
        .map_err(|e| format!("normalization: {e}"))?;

    let c = compare(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure((c.t - -3.674).abs() < 1e-3 && (c.df - 4.0).abs() < 1e-3, || format!("Welch gave t={} df={}", c.t, c.df))?;

    let units = prop::collection::vec((prop::collection::vec(0.0f64..5.0, 9), any::<bool>()), 4..16).prop_filter(
        "two units per group",
        |u| {
            let a = u.iter().filter(|(_, g)| *g).count();
            a >= 2 && u.len() - a >= 2
        },
    );
    let counter = std::cell::Cell::new(0u32);
    runner(256)
        .run(&units, |u| {
            let nets: Vec<OnaNetwork> = u
                .iter()
                .enumerate()
                .map(|(i, (v, _))| {
                    let mut n = OnaNetwork::zero(format!("u{i}"), 3);
                    n.adjacency = v.clone();
                    normalize(&n)
                })
                .collect();
            let label = |flip: bool| -> Vec<String> {
                u.iter().map(|(_, g)| if *g != flip { "A".to_string() } else { "B".to_string() }).collect()
            };
            let p = project(&nets, &label(false), ["A", "B"]).unwrap();
            let q = project(&nets, &label(true), ["A", "B"]).unwrap();
            if !p.degenerate {
                for (a, b) in p.points.iter().zip(&q.points) {
                    prop_assert_eq!(a.x, -b.x);
                }
                counter.set(counter.get() + 1);
            }
            Ok(())
        })
        .map_err(|e| format!("sign symmetry: {e}"))?;
    let symmetric = counter.get();
    ensure(symmetric > 0, || "every projection was degenerate".into())?;
    Ok(format!(
        "500 sequences match enumeration, worked example exact, unit norm < 1e-12, t={:.3} df={:.1}, {symmetric} exact label swaps",
        c.t, c.df
    ))
}

// --------------------------------------------------------------- smoke

fn live_smoke() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let script = dir.path().join("backend.json");
    let backend = BackendScript {
        candidate: TextScript { fallback: Some("I think the labs come first.".into()), ..Default::default() },
        ..Default::default()
    };
    std::fs::write(&script, serde_json_string(&backend)).map_err(|e| e.to_string())?;
    let config = ServerConfig::scripted(dir.path().join("logs"), Some(script));
    let budget = config.protocol.window_budget_ms;
    let (wall, text, srv_delta) = tokio_runtime().block_on(async {
        let e = |e: huddle_server::ClientError| e.to_string();
        let srv = huddle_server::start(&config, "127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let url = srv.ws_url();
        Client::connect(&url).await.map_err(e)?.create_session("smoke", Mode::Roundtable).await.map_err(e)?;
        let mut d1 = Client::join(&url, "smoke", ParticipantId::human("D1")).await.map_err(e)?;
        d1.send(&WireMessage::JoinRoom { room: "main".into() }).await.map_err(e)?;
        d1.wait_for(Duration::from_secs(5), |m| matches!(m, WireMessage::StateSnapshot { view } if view.mode == Some(Mode::Roundtable)))
            .await
            .map_err(e)?;
        let asked = Instant::now();
        d1.say("Lisa, what do you think?").await.map_err(e)?;
        let reply = d1
            .wait_for(Duration::from_millis(budget as u64), |m| matches!(m, WireMessage::AgentSpeech { .. }))
            .await
            .map_err(e)?;
        let wall = asked.elapsed();
        let WireMessage::AgentSpeech { text, .. } = reply else { unreachable!() };
        let paths = srv.hub.flush().await;
        let main = paths.iter().find(|p| p.to_string_lossy().contains("__main.")).ok_or("no main room log")?;
        let records = read_log(main).map_err(|e| e.to_string())?;
        let heard = records
            .iter()
            .find(|r| matches!(&r.body, LogBody::Event(EngineEvent::UserSpeechEnd { turn }) if turn.text.starts_with("Lisa")))
            .ok_or("question not logged")?
            .t;
        let spoke = records
            .iter()
            .find(|r| matches!(r.body, LogBody::Action(EngineAction::EmitAgentSpeech { .. })))
            .ok_or("speech not logged")?
            .t;
        srv.stop().await.map_err(|e| e.to_string())?;
        Ok::<_, String>((wall, text, spoke - heard))
    })?;
    ensure(srv_delta <= budget, || format!("server clock: {srv_delta} ms > {budget} ms"))?;
    Ok(format!("AgentSpeech {text:?} after {} ms wall, {srv_delta} ms server clock (budget {budget} ms)", wall.as_millis()))
}

fn main() {
    let checks: [Criterion; 6] = [
        ("protocol-invariants", protocol_invariants),
        ("determinism-and-replay", determinism),
        ("context-manager", context_manager),
        ("mode-policy-table", mode_table),
        ("ona-oracles", ona_oracle),
        ("live-path-smoke", live_smoke),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
