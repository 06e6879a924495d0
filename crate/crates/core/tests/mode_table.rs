use std::collections::BTreeSet;

use huddle_core::modes::{command_effect, policy_for, AgentLocation, CommandEffect, Mode, ModeError, UserControl};

use UserControl::*;

/// Expected table, written out independently of the implementation:
/// (mode, location, [proactive, reactive, hand, ping], controls).
fn expected() -> Vec<(Mode, AgentLocation, [bool; 4], Vec<UserControl>)> {
    vec![
        (Mode::Roundtable, AgentLocation::AtTable, [true, true, true, true], vec![]),
        (Mode::Peripheral, AgentLocation::OuterCircle, [false, false, true, false], vec![InviteAgent]),
        (Mode::Peripheral, AgentLocation::AtTable, [true, true, true, true], vec![RemoveAgent]),
        (Mode::Breakout, AgentLocation::Absent, [false, false, false, false], vec![EnterBreakout, CallBackPartner]),
        (Mode::Breakout, AgentLocation::InBreakout { owner: "D1".into() }, [true, true, true, true], vec![ReturnMain]),
    ]
}

fn locations() -> Vec<AgentLocation> {
    vec![
        AgentLocation::AtTable,
        AgentLocation::OuterCircle,
        AgentLocation::Absent,
        AgentLocation::InBreakout { owner: "D1".into() },
    ]
}

#[test]
fn every_pair_matches_the_table_or_errors() {
    let table = expected();
    let mut legal = 0;
    for mode in [Mode::Roundtable, Mode::Peripheral, Mode::Breakout] {
        for location in locations() {
            let row = table.iter().find(|(m, l, _, _)| *m == mode && *l == location);
            match (row, policy_for(mode, location.clone())) {
                (Some((_, _, caps, controls)), Ok(p)) => {
                    legal += 1;
                    let got = p.capabilities;
                    assert_eq!(
                        [got.proactive_speech, got.reactive_speech, got.hand_raise, got.hand_raise_ping],
                        *caps,
                        "{mode:?}/{location:?}"
                    );
                    assert_eq!(p.user_controls, controls.iter().copied().collect::<BTreeSet<_>>());
                    assert_eq!(p.mode, mode);
                    assert_eq!(p.agent_location, location);
                }
                (None, Err(ModeError::IllegalPair { .. })) => {}
                (row, got) => panic!("{mode:?}/{location:?}: expected {row:?}, got {got:?}"),
            }
        }
    }
    assert_eq!(legal, 5);
}

#[test]
fn controls_outside_the_table_are_refused() {
    let all = [InviteAgent, RemoveAgent, EnterBreakout, ReturnMain, CallBackPartner];
    for (mode, location, _, controls) in expected() {
        let policy = policy_for(mode, location.clone()).unwrap();
        for cmd in all {
            let toggle = mode == Mode::Peripheral && matches!(cmd, InviteAgent | RemoveAgent);
            let result = command_effect(&policy, cmd);
            if controls.contains(&cmd) || toggle {
                assert!(result.is_ok(), "{mode:?}/{location:?} {cmd:?}");
            } else {
                assert_eq!(result, Err(ModeError::NotPermitted { cmd }), "{mode:?}/{location:?}");
            }
        }
    }
}

#[test]
fn invite_and_remove_toggle_and_repeat_harmlessly() {
    let outer = policy_for(Mode::Peripheral, AgentLocation::OuterCircle).unwrap();
    let table = policy_for(Mode::Peripheral, AgentLocation::AtTable).unwrap();
    assert_eq!(command_effect(&outer, InviteAgent), Ok(CommandEffect::Relocate(table.clone())));
    assert_eq!(command_effect(&table, RemoveAgent), Ok(CommandEffect::Relocate(outer.clone())));
    assert_eq!(command_effect(&table, InviteAgent), Ok(CommandEffect::NoOp));
    assert_eq!(command_effect(&outer, RemoveAgent), Ok(CommandEffect::NoOp));
}
