//! A discussion session: rooms, who is in which, and the routing between
//! client messages, room engines, timers and the backend.
//!
//! The session is sans-IO. Drivers feed it wire messages, timer firings and
//! backend replies together with the session clock, and carry out the
//! [`Output`]s it returns. The live server and the simulator both drive it
//! this way, so for the same inputs they produce the same room logs.

use std::collections::BTreeMap;

use tracing::debug;

use crate::backend::{BackendRequest, Persona};
use crate::config::ProtocolConfig;
use crate::model::{
    EngineAction, EngineEvent, Millis, ParticipantId, ParticipantKind, RequestId, RoomId, RoomKind, TimerId,
    TimerKind,
};
use crate::modes::{command_effect, policy_for, AgentLocation, CommandEffect, Mode, ModeCommand, ModePolicy};
use crate::room::{RoomError, RoomHeader, RoomRuntime, RoomStep};
use crate::wire::{ErrorCode, RoomView, WireMessage};

pub const LOBBY: &str = "lobby";
pub const TRAINING: &str = "training";
pub const MAIN: &str = "main";

/// Turns shown in a snapshot.
const SNAPSHOT_TURNS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Send { to: String, message: WireMessage },
    StartTimer { room: String, timer_id: TimerId, kind: TimerKind, after_ms: Millis },
    CancelTimer { room: String, timer_id: TimerId, kind: TimerKind },
    Backend { room: String, request: BackendRequest },
    /// The room no longer wants the answer to this request.
    Abort { room: String, request_id: RequestId },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("no room {0}")]
    NoSuchRoom(String),
    #[error("no participant {0}")]
    NoSuchParticipant(String),
    #[error("only the host may do that")]
    NotHost,
    #[error("{0} has not joined")]
    NotJoined(String),
    #[error("{0}")]
    NotPermitted(String),
    #[error("no partner to call back")]
    NoSuchPartner,
    #[error("room {0} is in use; park everyone in the lobby first")]
    ModeLocked(String),
    #[error(transparent)]
    Room(#[from] RoomError),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::NoSuchRoom(_) => ErrorCode::NoSuchRoom,
            SessionError::NoSuchParticipant(_) => ErrorCode::NoSuchParticipant,
            SessionError::NotHost => ErrorCode::NotHost,
            SessionError::NotJoined(_) => ErrorCode::NotJoined,
            SessionError::NotPermitted(_) => ErrorCode::NotPermitted,
            SessionError::NoSuchPartner => ErrorCode::NoSuchPartner,
            SessionError::ModeLocked(_) => ErrorCode::ModeLocked,
            SessionError::Room(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone)]
struct Member {
    pid: ParticipantId,
    room: String,
}

#[derive(Debug, Clone)]
pub struct SessionSettings {
    pub session_id: String,
    pub mode: Mode,
    pub config: ProtocolConfig,
    pub persona: Persona,
}

impl SessionSettings {
    pub fn new(session_id: impl Into<String>, mode: Mode) -> Self {
        Self { session_id: session_id.into(), mode, config: ProtocolConfig::default(), persona: Persona::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: ProtocolConfig,
    persona: Persona,
    agent: ParticipantId,
    rooms: BTreeMap<String, RoomRuntime>,
    /// Rooms replaced by a mode change; kept for persistence.
    retired: Vec<RoomRuntime>,
    main: String,
    main_generation: u32,
    members: BTreeMap<String, Member>,
    faults: Vec<String>,
}

impl Session {
    pub fn new(settings: SessionSettings, now: Millis) -> Self {
        let agent = ParticipantId::agent(settings.persona.name.clone());
        let mut session = Self {
            id: settings.session_id,
            config: settings.config,
            persona: settings.persona,
            agent,
            rooms: BTreeMap::new(),
            retired: Vec::new(),
            main: MAIN.to_string(),
            main_generation: 1,
            members: BTreeMap::new(),
            faults: Vec::new(),
        };
        session.add_room(RoomId::new(LOBBY, RoomKind::Lobby), None, false, now);
        let training = policy_for(Mode::Roundtable, AgentLocation::AtTable).ok();
        session.add_room(RoomId::new(TRAINING, RoomKind::Training), training, false, now);
        let main = main_policy(settings.mode);
        session.add_room(RoomId::main(MAIN), Some(main), true, now);
        session
    }

    fn add_room(&mut self, room: RoomId, policy: Option<ModePolicy>, logged: bool, now: Millis) {
        let header = RoomHeader {
            session_id: self.id.clone(),
            room: room.clone(),
            policy,
            config: self.config.clone(),
            persona: self.persona.clone(),
            agent: self.agent.clone(),
            started_at: now,
            logged,
        };
        self.rooms.insert(room.id.clone(), RoomRuntime::new(header));
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn main_room(&self) -> &str {
        &self.main
    }

    pub fn room(&self, id: &str) -> Option<&RoomRuntime> {
        self.rooms.get(id)
    }

    /// Live rooms in id order.
    pub fn rooms(&self) -> impl Iterator<Item = &RoomRuntime> {
        self.rooms.values()
    }

    /// Live and retired rooms.
    pub fn all_rooms(&self) -> impl Iterator<Item = &RoomRuntime> {
        self.retired.iter().chain(self.rooms.values())
    }

    pub fn room_of(&self, participant: &str) -> Option<&str> {
        self.members.get(participant).map(|m| m.room.as_str())
    }

    pub fn participants(&self) -> impl Iterator<Item = &ParticipantId> {
        self.members.values().map(|m| &m.pid)
    }

    fn occupants(&self, room: &str) -> Vec<ParticipantId> {
        self.members.values().filter(|m| m.room == room).map(|m| m.pid.clone()).collect()
    }

    pub fn view(&self, room: &str) -> Option<RoomView> {
        let rt = self.rooms.get(room)?;
        let policy = rt.policy();
        let engine = rt.engine();
        Some(RoomView {
            session_id: self.id.clone(),
            room: rt.room().clone(),
            mode: rt.header().mode(),
            agent_location: rt.agent_location(),
            capabilities: policy.map(|p| p.capabilities).unwrap_or(policy_none()),
            user_controls: policy.map(|p| p.user_controls.clone()).unwrap_or_default(),
            participants: self.occupants(room),
            hand_raised: engine.is_some_and(|e| e.is_hand_raised()),
            window_open: engine.is_some_and(|e| e.is_window_open()),
            recent_turns: rt.transcript().recent(SNAPSHOT_TURNS),
        })
    }

    fn snapshot_to(&self, out: &mut Vec<Output>, to: &str, room: &str) {
        if let Some(view) = self.view(room) {
            out.push(Output::Send { to: to.to_string(), message: WireMessage::StateSnapshot { view } });
        }
    }

    fn snapshot_room(&self, out: &mut Vec<Output>, room: &str) {
        for p in self.occupants(room) {
            self.snapshot_to(out, &p.id, room);
        }
    }

    /// Registers a client and parks it in the lobby. Reconnects keep their
    /// room.
    pub fn connect(&mut self, participant: ParticipantId, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        if participant.kind == ParticipantKind::Agent {
            out.push(Output::Send {
                to: participant.id.clone(),
                message: WireMessage::error(ErrorCode::NotPermitted, "the agent does not connect as a client"),
            });
            return out;
        }
        let room = match self.members.get(&participant.id) {
            Some(m) => m.room.clone(),
            None => {
                self.members.insert(participant.id.clone(), Member { pid: participant.clone(), room: LOBBY.into() });
                self.room_change(&mut out, &participant, None, Some(LOBBY), now);
                LOBBY.to_string()
            }
        };
        self.snapshot_room(&mut out, &room);
        out
    }

    /// Drops a client; it leaves its room.
    pub fn disconnect(&mut self, participant: &str, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        if let Some(m) = self.members.remove(participant) {
            self.room_change(&mut out, &m.pid, Some(&m.room), None, now);
            self.snapshot_room(&mut out, &m.room);
        }
        out
    }

    /// Handles one client message from `from`.
    pub fn handle(&mut self, from: &str, message: WireMessage, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        if let Err(e) = self.dispatch(&mut out, from, message, now) {
            debug!(session = %self.id, from, error = %e, "request rejected");
            out.push(Output::Send { to: from.to_string(), message: WireMessage::error(e.code(), e.to_string()) });
        }
        out
    }

    fn member(&self, id: &str) -> Result<&Member, SessionError> {
        self.members.get(id).ok_or_else(|| SessionError::NotJoined(id.to_string()))
    }

    fn require_host(&self, id: &str) -> Result<(), SessionError> {
        if self.member(id)?.pid.kind == ParticipantKind::Host {
            Ok(())
        } else {
            Err(SessionError::NotHost)
        }
    }

    fn dispatch(&mut self, out: &mut Vec<Output>, from: &str, message: WireMessage, now: Millis) -> Result<(), SessionError> {
        match message {
            WireMessage::JoinRoom { room } => {
                let pid = self.member(from)?.pid.clone();
                let target = self.rooms.get(&room).ok_or_else(|| SessionError::NoSuchRoom(room.clone()))?;
                if target.room().breakout_owner().is_some() && pid.kind != ParticipantKind::Host {
                    return Err(SessionError::NotPermitted("breakout rooms are entered with enter_breakout".into()));
                }
                self.move_member(out, &pid, &room, now)
            }
            WireMessage::SpeechStart { .. } => self.speech_start(out, from, now),
            WireMessage::SpeechEnd { .. } => self.speech_end(out, from, "", now),
            WireMessage::Utterance { text, .. } => {
                let room = self.speaking_room(from)?;
                if !self.rooms[&room].is_user_speaking(&self.members[from].pid) {
                    self.speech_start(out, from, now)?;
                }
                self.speech_end(out, from, &text, now)
            }
            WireMessage::ModeCommand(cmd) => self.apply_command(out, from, cmd, now),
            WireMessage::HostMove { participant, room } => {
                self.require_host(from)?;
                let pid = self
                    .members
                    .get(&participant)
                    .map(|m| m.pid.clone())
                    .ok_or_else(|| SessionError::NoSuchParticipant(participant.clone()))?;
                let target = self.rooms.get(&room).ok_or_else(|| SessionError::NoSuchRoom(room.clone()))?;
                if let Some(owner) = target.room().breakout_owner() {
                    if owner.id != pid.id && pid.kind != ParticipantKind::Host {
                        return Err(SessionError::NotPermitted(format!("{room} belongs to {}", owner.id)));
                    }
                }
                self.move_member(out, &pid, &room, now)?;
                out.push(Output::Send { to: from.to_string(), message: WireMessage::Ack { detail: format!("moved {participant} to {room}") } });
                Ok(())
            }
            WireMessage::SetMode { room, mode } => {
                self.require_host(from)?;
                let new_room = self.set_mode(&room, mode, now)?;
                out.push(Output::Send { to: from.to_string(), message: WireMessage::Ack { detail: new_room } });
                Ok(())
            }
            WireMessage::ClientHello { .. } | WireMessage::CreateSession { .. } => {
                Err(SessionError::NotPermitted("handled by the server, not the session".into()))
            }
            other => Err(SessionError::NotPermitted(format!("clients may not send {}", wire_name(&other)))),
        }
    }

    fn speaking_room(&self, from: &str) -> Result<String, SessionError> {
        let m = self.member(from)?;
        if m.pid.kind == ParticipantKind::Host && m.room != LOBBY {
            return Err(SessionError::NotPermitted("the host does not speak in discussion rooms".into()));
        }
        Ok(m.room.clone())
    }

    fn speech_start(&mut self, out: &mut Vec<Output>, from: &str, now: Millis) -> Result<(), SessionError> {
        let room = self.speaking_room(from)?;
        let pid = self.members[from].pid.clone();
        let rt = self.rooms.get_mut(&room).ok_or_else(|| SessionError::NoSuchRoom(room.clone()))?;
        if rt.is_user_speaking(&pid) {
            return Ok(());
        }
        let event = EngineEvent::UserSpeechStart { speaker: pid, room: rt.room().clone(), at: now };
        self.feed(out, &room, &event, now)
    }

    fn speech_end(&mut self, out: &mut Vec<Output>, from: &str, text: &str, now: Millis) -> Result<(), SessionError> {
        let room = self.speaking_room(from)?;
        let pid = self.members[from].pid.clone();
        let rt = self.rooms.get(&room).ok_or_else(|| SessionError::NoSuchRoom(room.clone()))?;
        let turn = rt.make_turn(&pid, text, now);
        self.feed(out, &room, &EngineEvent::UserSpeechEnd { turn }, now)
    }

    fn apply_command(&mut self, out: &mut Vec<Output>, from: &str, mut cmd: ModeCommand, now: Millis) -> Result<(), SessionError> {
        let member = self.member(from)?.clone();
        if cmd.issuer != member.pid.id {
            if member.pid.kind != ParticipantKind::Host {
                return Err(SessionError::NotPermitted("issuer must be the sender".into()));
            }
            // The host may act on behalf of a participant.
            cmd.issuer = member.pid.id.clone();
        }
        let room = member.room.clone();
        let policy = self
            .rooms
            .get(&room)
            .and_then(|r| r.policy().cloned())
            .ok_or_else(|| SessionError::NotPermitted(format!("{:?} is not available here", cmd.cmd)))?;
        let effect = command_effect(&policy, cmd.cmd).map_err(|e| SessionError::NotPermitted(e.to_string()))?;
        match effect {
            CommandEffect::Relocate(_) | CommandEffect::NoOp => {
                self.feed(out, &room, &EngineEvent::ModeCommand { cmd }, now)?;
                self.snapshot_room(out, &room);
            }
            CommandEffect::EnterBreakout => {
                let breakout = self.ensure_breakout(&member.pid, now);
                self.move_member(out, &member.pid, &breakout, now)?;
            }
            CommandEffect::ReturnMain => {
                let main = self.main.clone();
                self.move_member(out, &member.pid, &main, now)?;
            }
            CommandEffect::CallBack => {
                let prefix = format!("{}/breakout-", self.main);
                let partners: Vec<ParticipantId> = self
                    .members
                    .values()
                    .filter(|m| m.pid.id != member.pid.id && m.pid.kind == ParticipantKind::Human)
                    .filter(|m| m.room.starts_with(&prefix))
                    .filter(|m| cmd.target.as_ref().is_none_or(|t| *t == m.pid.id))
                    .map(|m| m.pid.clone())
                    .collect();
                if partners.is_empty() {
                    return Err(SessionError::NoSuchPartner);
                }
                for p in partners {
                    out.push(Output::Send {
                        to: p.id.clone(),
                        message: WireMessage::CallBackRequest { from: member.pid.id.clone(), room: room.clone() },
                    });
                }
            }
        }
        Ok(())
    }

    fn ensure_breakout(&mut self, owner: &ParticipantId, now: Millis) -> String {
        let id = format!("{}/breakout-{}", self.main, owner.id);
        if !self.rooms.contains_key(&id) {
            let policy = policy_for(Mode::Breakout, AgentLocation::InBreakout { owner: owner.id.clone() }).ok();
            self.add_room(RoomId::new(id.clone(), RoomKind::Breakout { owner: owner.clone() }), policy, true, now);
        }
        id
    }

    /// Changes the mode of the main room. An unused room is reconfigured in
    /// place; a used one is retired and replaced by a fresh main room.
    /// Returns the id of the main room afterwards.
    pub fn set_mode(&mut self, room: &str, mode: Mode, now: Millis) -> Result<String, SessionError> {
        if room != self.main {
            return Err(SessionError::NotPermitted("only the main room has a mode".into()));
        }
        let prefix = format!("{}/breakout-", self.main);
        let busy = self
            .members
            .values()
            .any(|m| m.pid.kind == ParticipantKind::Human && (m.room == self.main || m.room.starts_with(&prefix)));
        if busy {
            return Err(SessionError::ModeLocked(room.to_string()));
        }
        let policy = main_policy(mode);
        let main = self.main.clone();
        if self.rooms.get_mut(&main).is_some_and(|r| r.reset_policy(policy.clone())) {
            return Ok(main);
        }
        let stale: Vec<String> = self.rooms.keys().filter(|k| **k == main || k.starts_with(&prefix)).cloned().collect();
        for k in stale {
            if let Some(rt) = self.rooms.remove(&k) {
                self.retired.push(rt);
            }
        }
        self.main_generation += 1;
        self.main = format!("{MAIN}-{}", self.main_generation);
        let stranded: Vec<ParticipantId> =
            self.members.values().filter(|m| m.room == main || m.room.starts_with(&prefix)).map(|m| m.pid.clone()).collect();
        self.add_room(RoomId::main(self.main.clone()), Some(policy), true, now);
        for h in stranded {
            if let Some(m) = self.members.get_mut(&h.id) {
                m.room = LOBBY.into();
            }
        }
        Ok(self.main.clone())
    }

    fn move_member(&mut self, out: &mut Vec<Output>, pid: &ParticipantId, to: &str, now: Millis) -> Result<(), SessionError> {
        if !self.rooms.contains_key(to) {
            return Err(SessionError::NoSuchRoom(to.to_string()));
        }
        let from = self.member(&pid.id)?.room.clone();
        if from == to {
            self.snapshot_to(out, &pid.id, to);
            return Ok(());
        }
        if let Some(m) = self.members.get_mut(&pid.id) {
            m.room = to.to_string();
        }
        self.room_change(out, pid, Some(&from), Some(to), now);
        self.snapshot_room(out, &from);
        self.snapshot_room(out, to);
        Ok(())
    }

    fn room_change(&mut self, out: &mut Vec<Output>, pid: &ParticipantId, from: Option<&str>, to: Option<&str>, now: Millis) {
        let from_id = from.and_then(|r| self.rooms.get(r)).map(|r| r.room().clone());
        let to_id = to.and_then(|r| self.rooms.get(r)).map(|r| r.room().clone());
        let event = EngineEvent::RoomChange { participant: pid.clone(), from: from_id, to: to_id };
        for room in [from, to].into_iter().flatten() {
            if let Err(e) = self.feed(out, room, &event, now) {
                debug!(room, error = %e, "room change not applied");
            }
        }
    }

    /// A timer set by `room` fired.
    pub fn timer_fired(&mut self, room: &str, timer_id: TimerId, kind: TimerKind, now: Millis) -> Vec<Output> {
        self.deliver(room, EngineEvent::TimerFired { timer_id, kind }, now)
    }

    /// Feeds a backend reply or timer event into `room`. Events for rooms
    /// that no longer exist are dropped.
    pub fn deliver(&mut self, room: &str, event: EngineEvent, now: Millis) -> Vec<Output> {
        let mut out = Vec::new();
        if self.rooms.contains_key(room) {
            if let Err(e) = self.feed(&mut out, room, &event, now) {
                debug!(room, error = %e, "event rejected");
            }
        }
        out
    }

    fn feed(&mut self, out: &mut Vec<Output>, room: &str, event: &EngineEvent, now: Millis) -> Result<(), SessionError> {
        let rt = self.rooms.get_mut(room).ok_or_else(|| SessionError::NoSuchRoom(room.to_string()))?;
        match rt.handle(event, now) {
            Ok(step) => {
                self.route(out, room, step);
                Ok(())
            }
            Err(e) => {
                self.faults.push(format!("{room} at {now}: {e}"));
                Err(e.into())
            }
        }
    }

    /// Internal errors raised by room engines since the last call. Never
    /// expected; drivers surface them.
    pub fn take_faults(&mut self) -> Vec<String> {
        std::mem::take(&mut self.faults)
    }

    fn route(&self, out: &mut Vec<Output>, room: &str, step: RoomStep) {
        let occupants = self.occupants(room);
        let broadcast = |out: &mut Vec<Output>, message: WireMessage| {
            for p in &occupants {
                out.push(Output::Send { to: p.id.clone(), message: message.clone() });
            }
        };
        for action in &step.actions {
            match action {
                EngineAction::StartTimer { timer_id, kind, after_ms } => out.push(Output::StartTimer {
                    room: room.to_string(),
                    timer_id: *timer_id,
                    kind: *kind,
                    after_ms: *after_ms,
                }),
                EngineAction::CancelTimer { timer_id, kind } => {
                    out.push(Output::CancelTimer { room: room.to_string(), timer_id: *timer_id, kind: *kind })
                }
                EngineAction::EmitAgentSpeech { text } => {
                    broadcast(out, WireMessage::AgentSpeech { room: room.to_string(), text: text.clone() })
                }
                EngineAction::RaiseHand { ping } => {
                    broadcast(out, WireMessage::HandRaised { room: room.to_string(), ping: *ping })
                }
                EngineAction::LowerHand => broadcast(out, WireMessage::HandLowered { room: room.to_string() }),
                EngineAction::AbortGeneration { request_id } => {
                    out.push(Output::Abort { room: room.to_string(), request_id: request_id.clone() })
                }
                _ => {}
            }
        }
        for turn in step.appended {
            broadcast(out, WireMessage::TurnAppended { turn });
        }
        for request in step.requests {
            out.push(Output::Backend { room: room.to_string(), request });
        }
    }
}

fn main_policy(mode: Mode) -> ModePolicy {
    policy_for(mode, AgentLocation::initial(mode)).expect("initial locations are legal")
}

fn policy_none() -> crate::modes::Capabilities {
    crate::modes::Capabilities { proactive_speech: false, reactive_speech: false, hand_raise: false, hand_raise_ping: false }
}

fn wire_name(message: &WireMessage) -> String {
    let json = serde_json::to_value(message).unwrap_or_default();
    json.get("type").and_then(|t| t.as_str()).unwrap_or("?").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::UserControl;

    fn session(mode: Mode) -> Session {
        let mut s = Session::new(SessionSettings::new("s1", mode), 0);
        s.connect(ParticipantId::host("host"), 0);
        s.connect(ParticipantId::human("D1"), 0);
        s.connect(ParticipantId::human("D2"), 0);
        s
    }

    fn sent_to<'a>(out: &'a [Output], who: &str) -> Vec<&'a WireMessage> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send { to, message } if to == who => Some(message),
                _ => None,
            })
            .collect()
    }

    fn error_code(out: &[Output], who: &str) -> Option<ErrorCode> {
        sent_to(out, who).into_iter().find_map(|m| match m {
            WireMessage::Error { code, .. } => Some(*code),
            _ => None,
        })
    }

    #[test]
    fn host_moves_dyad_into_roundtable() {
        let mut s = session(Mode::Roundtable);
        for who in ["D1", "D2"] {
            let out = s.handle("host", WireMessage::HostMove { participant: who.into(), room: MAIN.into() }, 10);
            let snap = sent_to(&out, who)
                .into_iter()
                .rev()
                .find_map(|m| match m {
                    WireMessage::StateSnapshot { view } => Some(view.clone()),
                    _ => None,
                })
                .unwrap();
            assert_eq!(snap.mode, Some(Mode::Roundtable));
        }
        assert_eq!(s.room_of("D1"), Some(MAIN));
    }

    #[test]
    fn host_move_errors() {
        let mut s = session(Mode::Roundtable);
        let out = s.handle("host", WireMessage::HostMove { participant: "ghost".into(), room: MAIN.into() }, 0);
        assert_eq!(error_code(&out, "host"), Some(ErrorCode::NoSuchParticipant));
        let out = s.handle("D1", WireMessage::HostMove { participant: "D2".into(), room: MAIN.into() }, 0);
        assert_eq!(error_code(&out, "D1"), Some(ErrorCode::NotHost));
        let out = s.handle("host", WireMessage::HostMove { participant: "D2".into(), room: "nowhere".into() }, 0);
        assert_eq!(error_code(&out, "host"), Some(ErrorCode::NoSuchRoom));
    }

    #[test]
    fn invocation_reaches_backend() {
        let mut s = session(Mode::Roundtable);
        s.handle("D1", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        let out = s.handle("D1", WireMessage::Utterance { text: "Lisa, what do you think?".into(), started_at: None, ended_at: None }, 1_000);
        assert!(out.iter().any(|o| matches!(o, Output::Backend { .. })));
    }

    #[test]
    fn breakout_main_room_has_no_agent_traffic() {
        let mut s = session(Mode::Breakout);
        s.handle("D1", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        let out = s.handle("D1", WireMessage::Utterance { text: "Lisa, are you there?".into(), started_at: None, ended_at: None }, 1_000);
        assert!(!out.iter().any(|o| matches!(o, Output::Backend { .. } | Output::StartTimer { .. })));
    }

    #[test]
    fn breakout_enter_and_call_back() {
        let mut s = session(Mode::Breakout);
        s.handle("D1", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        s.handle("D2", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        let cmd = |issuer: &str, c: UserControl| WireMessage::ModeCommand(ModeCommand { cmd: c, issuer: issuer.into(), target: None });
        let out = s.handle("D1", cmd("D1", UserControl::CallBackPartner), 100);
        assert_eq!(error_code(&out, "D1"), Some(ErrorCode::NoSuchPartner));
        s.handle("D1", cmd("D1", UserControl::EnterBreakout), 200);
        assert_eq!(s.room_of("D1"), Some("main/breakout-D1"));
        let out = s.handle("D1", WireMessage::Utterance { text: "Lisa, help me".into(), started_at: None, ended_at: None }, 300);
        assert!(sent_to(&out, "D2").is_empty());
        let out = s.handle("D2", cmd("D2", UserControl::CallBackPartner), 400);
        assert!(sent_to(&out, "D1").iter().any(|m| matches!(m, WireMessage::CallBackRequest { .. })));
        assert_eq!(s.room_of("D1"), Some("main/breakout-D1"));
        s.handle("D1", cmd("D1", UserControl::ReturnMain), 500);
        assert_eq!(s.room_of("D1"), Some(MAIN));
    }

    #[test]
    fn cannot_join_someone_elses_breakout() {
        let mut s = session(Mode::Breakout);
        s.handle("D1", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        s.handle("D1", WireMessage::ModeCommand(ModeCommand { cmd: UserControl::EnterBreakout, issuer: "D1".into(), target: None }), 10);
        let out = s.handle("host", WireMessage::HostMove { participant: "D2".into(), room: "main/breakout-D1".into() }, 20);
        assert_eq!(error_code(&out, "host"), Some(ErrorCode::NotPermitted));
        let out = s.handle("D2", WireMessage::JoinRoom { room: "main/breakout-D1".into() }, 20);
        assert_eq!(error_code(&out, "D2"), Some(ErrorCode::NotPermitted));
    }

    #[test]
    fn roundtable_remove_not_permitted() {
        let mut s = session(Mode::Roundtable);
        s.handle("D1", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        let out = s.handle("D1", WireMessage::ModeCommand(ModeCommand { cmd: UserControl::RemoveAgent, issuer: "D1".into(), target: None }), 10);
        assert_eq!(error_code(&out, "D1"), Some(ErrorCode::NotPermitted));
    }

    #[test]
    fn set_mode_retires_used_main_room() {
        let mut s = session(Mode::Roundtable);
        assert_eq!(s.set_mode(MAIN, Mode::Peripheral, 0).unwrap(), MAIN);
        s.handle("D1", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        assert_eq!(s.set_mode(MAIN, Mode::Breakout, 5), Err(SessionError::ModeLocked(MAIN.into())));
        s.handle("D1", WireMessage::JoinRoom { room: LOBBY.into() }, 10);
        assert_eq!(s.set_mode(MAIN, Mode::Breakout, 20).unwrap(), "main-2");
        assert_eq!(s.view("main-2").unwrap().mode, Some(Mode::Breakout));
        assert_eq!(s.all_rooms().filter(|r| r.header().logged).count(), 2);
    }

    #[test]
    fn host_cannot_speak_in_discussion() {
        let mut s = session(Mode::Roundtable);
        s.handle("host", WireMessage::JoinRoom { room: MAIN.into() }, 0);
        let out = s.handle("host", WireMessage::SpeechStart { at: None }, 10);
        assert_eq!(error_code(&out, "host"), Some(ErrorCode::NotPermitted));
    }
}
