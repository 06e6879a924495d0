//! The checker must flag hand-corrupted traces, otherwise a clean fuzz run
//! means nothing.

use huddle_core::modes::Mode;
use huddle_core::room::LogBody;
use huddle_core::{EngineAction, EngineEvent, ProtocolConfig, WindowReason};
use huddle_sim::fuzz::generate;
use huddle_sim::invariants::*;
use huddle_sim::{check_invariants, run_scenario, TraceEntry};

fn base(mode: Mode) -> (Vec<TraceEntry>, i64) {
    let s = generate(5, mode);
    let trace = run_scenario(&s).unwrap();
    assert!(trace.violations().is_empty());
    (trace.entries, s.horizon_ms)
}

fn find(entries: &[TraceEntry], pred: impl Fn(&EngineAction) -> bool) -> usize {
    entries
        .iter()
        .position(|e| matches!(&e.body, LogBody::Action(a) if pred(a)))
        .expect("the base trace contains the action")
}

fn flagged(entries: &[TraceEntry], horizon: i64, invariant: &str) -> bool {
    check_invariants(entries, horizon, None).iter().any(|v| v.invariant == invariant)
}

#[test]
fn duplicate_open_window() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::OpenWindow { .. }));
    e.insert(i + 1, e[i].clone());
    assert!(flagged(&e, h, SINGLE_WINDOW));
}

#[test]
fn speech_outside_a_window() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::CloseWindow));
    let mut extra = e[i].clone();
    extra.body = LogBody::Action(EngineAction::EmitAgentSpeech { text: "late".into() });
    e.insert(i + 1, extra);
    assert!(flagged(&e, h, GATED_SPEECH));
}

#[test]
fn missing_mute_after_barge_in() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::MuteAgent));
    e.remove(i);
    assert!(flagged(&e, h, BARGE_IN));
}

#[test]
fn window_left_open() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::CloseWindow));
    e.remove(i);
    assert!(flagged(&e, h, WINDOW_BUDGET));
}

#[test]
fn proactive_window_extended() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::OpenWindow { reason: WindowReason::ProactiveLull, .. }));
    let mut extra = e[i].clone();
    extra.body = LogBody::Action(EngineAction::ExtendWindow);
    e.insert(i + 1, extra);
    assert!(flagged(&e, h, WINDOW_BUDGET));
}

#[test]
fn hand_never_lowered() {
    let (mut e, h) = base(Mode::Peripheral);
    let i = find(&e, |a| matches!(a, EngineAction::LowerHand));
    e.remove(i);
    assert!(flagged(&e, h, HAND_LIFECYCLE));
}

#[test]
fn wrong_ping() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::RaiseHand { .. }));
    let LogBody::Action(EngineAction::RaiseHand { ping }) = e[i].body.clone() else { unreachable!() };
    e[i].body = LogBody::Action(EngineAction::RaiseHand { ping: !ping });
    assert!(flagged(&e, h, PING_FIDELITY));
}

#[test]
fn duplicate_timer() {
    let (mut e, h) = base(Mode::Roundtable);
    let i = find(&e, |a| matches!(a, EngineAction::StartTimer { .. }));
    let mut extra = e[i].clone();
    if let LogBody::Action(EngineAction::StartTimer { timer_id, .. }) = &mut extra.body {
        timer_id.0 += 10_000;
    }
    e.insert(i + 1, extra);
    assert!(flagged(&e, h, TIMER_UNIQUE));
}

#[test]
fn stricter_config_override_flags_proactive_rate() {
    let (e, h) = base(Mode::Roundtable);
    let strict = ProtocolConfig { max_consecutive_proactive: 0, ..ProtocolConfig::default() };
    assert!(check_invariants(&e, h, Some(&strict)).iter().any(|v| v.invariant == PROACTIVE_RATE));
}

#[test]
fn missing_forced_raise() {
    let mut s = huddle_sim::Scenario::new(Mode::Roundtable);
    s.script = vec![
        huddle_sim::Step::say(0, "D1", "menu first", 1_000),
        huddle_sim::Step::say(125_000, "D2", "the menu is set", 1_000),
    ];
    let trace = run_scenario(&s).unwrap();
    let mut e = trace.entries.clone();
    let i = find(&e, |a| matches!(a, EngineAction::RaiseHand { .. }));
    e.remove(i);
    assert!(flagged(&e, s.horizon_ms, FORCED_RAISE));
}

#[test]
fn foreign_turn_in_a_breakout() {
    let (e, h) = base(Mode::Breakout);
    let mut e = e;
    let i = e
        .iter()
        .position(|x| x.room.contains("breakout") && matches!(&x.body, LogBody::Event(EngineEvent::UserSpeechEnd { .. })))
        .expect("seed 5 uses a breakout");
    if let LogBody::Event(EngineEvent::UserSpeechEnd { turn }) = &mut e[i].body {
        turn.speaker.id = if turn.speaker.id == "D1" { "D2".into() } else { "D1".into() };
    }
    assert!(flagged(&e, h, BREAKOUT_ISOLATION));
}
