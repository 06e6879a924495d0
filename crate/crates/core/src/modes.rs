//! Collaboration-mode policy: what the agent may do and which controls the
//! humans get, for each legal (mode, agent location) pair.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Roundtable,
    Peripheral,
    Breakout,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Roundtable => "roundtable",
            Mode::Peripheral => "peripheral",
            Mode::Breakout => "breakout",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "roundtable" => Ok(Mode::Roundtable),
            "peripheral" => Ok(Mode::Peripheral),
            "breakout" => Ok(Mode::Breakout),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentLocation {
    AtTable,
    OuterCircle,
    Absent,
    InBreakout { owner: String },
}

impl AgentLocation {
    /// Where the agent sits when a room of `mode` is created.
    pub fn initial(mode: Mode) -> Self {
        match mode {
            Mode::Roundtable => AgentLocation::AtTable,
            Mode::Peripheral => AgentLocation::OuterCircle,
            Mode::Breakout => AgentLocation::Absent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Capabilities {
    pub proactive_speech: bool,
    pub reactive_speech: bool,
    pub hand_raise: bool,
    pub hand_raise_ping: bool,
}

impl Capabilities {
    const ALL: Capabilities =
        Capabilities { proactive_speech: true, reactive_speech: true, hand_raise: true, hand_raise_ping: true };
    const NONE: Capabilities =
        Capabilities { proactive_speech: false, reactive_speech: false, hand_raise: false, hand_raise_ping: false };

    pub fn any(&self) -> bool {
        self.proactive_speech || self.reactive_speech || self.hand_raise
    }

    pub fn can_speak(&self) -> bool {
        self.proactive_speech || self.reactive_speech
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserControl {
    InviteAgent,
    RemoveAgent,
    EnterBreakout,
    ReturnMain,
    CallBackPartner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModePolicy {
    pub mode: Mode,
    pub agent_location: AgentLocation,
    pub capabilities: Capabilities,
    pub user_controls: BTreeSet<UserControl>,
}

/// A user-issued control, as carried on the wire: `{cmd, issuer, target?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCommand {
    pub cmd: UserControl,
    pub issuer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModeError {
    #[error("agent location {location:?} is not legal in {mode} mode")]
    IllegalPair { mode: Mode, location: AgentLocation },
    #[error("{cmd:?} is not available here")]
    NotPermitted { cmd: UserControl },
    #[error("no partner to call back")]
    NoSuchPartner,
}

/// Capability and control table for a (mode, location) pair.
pub fn policy_for(mode: Mode, location: AgentLocation) -> Result<ModePolicy, ModeError> {
    use UserControl::*;
    let (capabilities, controls): (Capabilities, &[UserControl]) = match (mode, &location) {
        (Mode::Roundtable, AgentLocation::AtTable) => (Capabilities::ALL, &[]),
        (Mode::Peripheral, AgentLocation::OuterCircle) => (
            Capabilities { proactive_speech: false, reactive_speech: false, hand_raise: true, hand_raise_ping: false },
            &[InviteAgent],
        ),
        (Mode::Peripheral, AgentLocation::AtTable) => (Capabilities::ALL, &[RemoveAgent]),
        (Mode::Breakout, AgentLocation::Absent) => (Capabilities::NONE, &[EnterBreakout, CallBackPartner]),
        (Mode::Breakout, AgentLocation::InBreakout { .. }) => (Capabilities::ALL, &[ReturnMain]),
        _ => return Err(ModeError::IllegalPair { mode, location }),
    };
    Ok(ModePolicy { mode, agent_location: location, capabilities, user_controls: controls.iter().copied().collect() })
}

/// What a permitted command does, before the session applies it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandEffect {
    /// The agent moves; the room's engine gets a new policy.
    Relocate(ModePolicy),
    /// Invite while already at the table, or remove while already out.
    NoOp,
    EnterBreakout,
    ReturnMain,
    CallBack,
}

/// Checks `cmd` against the policy of the issuer's room.
///
/// Invite and remove are toggles in peripheral mode: issuing the one that
/// matches the current location is accepted as a no-op.
pub fn command_effect(policy: &ModePolicy, cmd: UserControl) -> Result<CommandEffect, ModeError> {
    let toggle = policy.mode == Mode::Peripheral && matches!(cmd, UserControl::InviteAgent | UserControl::RemoveAgent);
    if !policy.user_controls.contains(&cmd) && !toggle {
        return Err(ModeError::NotPermitted { cmd });
    }
    Ok(match cmd {
        UserControl::InviteAgent => match policy.agent_location {
            AgentLocation::OuterCircle => CommandEffect::Relocate(policy_for(Mode::Peripheral, AgentLocation::AtTable)?),
            _ => CommandEffect::NoOp,
        },
        UserControl::RemoveAgent => match policy.agent_location {
            AgentLocation::AtTable => CommandEffect::Relocate(policy_for(Mode::Peripheral, AgentLocation::OuterCircle)?),
            _ => CommandEffect::NoOp,
        },
        UserControl::EnterBreakout => CommandEffect::EnterBreakout,
        UserControl::ReturnMain => CommandEffect::ReturnMain,
        UserControl::CallBackPartner => CommandEffect::CallBack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peripheral_outer_circle_raises_without_ping() {
        let p = policy_for(Mode::Peripheral, AgentLocation::OuterCircle).unwrap();
        assert!(p.capabilities.hand_raise);
        assert!(!p.capabilities.hand_raise_ping);
        assert!(!p.capabilities.can_speak());
    }

    #[test]
    fn roundtable_has_everything_and_no_controls() {
        let p = policy_for(Mode::Roundtable, AgentLocation::AtTable).unwrap();
        assert_eq!(p.capabilities, Capabilities::ALL);
        assert!(p.user_controls.is_empty());
    }

    #[test]
    fn breakout_main_room_agent_is_absent() {
        let p = policy_for(Mode::Breakout, AgentLocation::Absent).unwrap();
        assert!(!p.capabilities.any());
        assert!(!p.capabilities.hand_raise_ping);
    }

    #[test]
    fn outer_circle_is_illegal_outside_peripheral() {
        assert!(matches!(
            policy_for(Mode::Roundtable, AgentLocation::OuterCircle),
            Err(ModeError::IllegalPair { .. })
        ));
    }

    #[test]
    fn remove_in_roundtable_is_not_permitted() {
        let p = policy_for(Mode::Roundtable, AgentLocation::AtTable).unwrap();
        assert_eq!(
            command_effect(&p, UserControl::RemoveAgent),
            Err(ModeError::NotPermitted { cmd: UserControl::RemoveAgent })
        );
    }

    #[test]
    fn invite_is_idempotent_in_peripheral() {
        let at_table = policy_for(Mode::Peripheral, AgentLocation::AtTable).unwrap();
        assert_eq!(command_effect(&at_table, UserControl::InviteAgent), Ok(CommandEffect::NoOp));
        let outer = policy_for(Mode::Peripheral, AgentLocation::OuterCircle).unwrap();
        match command_effect(&outer, UserControl::InviteAgent).unwrap() {
            CommandEffect::Relocate(p) => assert_eq!(p.agent_location, AgentLocation::AtTable),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(command_effect(&outer, UserControl::RemoveAgent), Ok(CommandEffect::NoOp));
    }

    #[test]
    fn mode_command_wire_shape() {
        let cmd: ModeCommand = serde_json::from_str(r#"{"cmd":"invite_agent","issuer":"D1"}"#).unwrap();
        assert_eq!(cmd.cmd, UserControl::InviteAgent);
        assert_eq!(cmd.target, None);
        assert_eq!(serde_json::to_string(&cmd).unwrap(), r#"{"cmd":"invite_agent","issuer":"D1"}"#);
    }
}
