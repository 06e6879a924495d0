//! One room: its engine, its transcript, and the log that makes it
//! replayable.
//!
//! Every input goes through [`RoomRuntime::handle`] as an [`EngineEvent`]
//! and is logged before it is applied; every action is logged after. The
//! header plus the logged events fully determine the room, which is what
//! [`crate::log::replay`] relies on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendRequest, Persona, RequestPayload};
use crate::config::ProtocolConfig;
use crate::context::{ContextError, Transcript};
use crate::engine::{EngineError, EngineState, Pending};
use crate::model::{EngineAction, EngineEvent, Millis, ParticipantId, RoomId, Turn, TurnOrigin};
use crate::modes::{AgentLocation, Mode, ModePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoomHeader {
    pub session_id: String,
    pub room: RoomId,
    /// None for rooms the agent never enters (the lobby).
    pub policy: Option<ModePolicy>,
    pub config: ProtocolConfig,
    pub persona: Persona,
    pub agent: ParticipantId,
    pub started_at: Millis,
    pub logged: bool,
}

impl RoomHeader {
    pub fn mode(&self) -> Option<Mode> {
        self.policy.as_ref().map(|p| p.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBody {
    Header(Box<RoomHeader>),
    Event(EngineEvent),
    Action(EngineAction),
}

/// One JSONL line of a room log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: Millis,
    #[serde(flatten)]
    pub body: LogBody,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoomError {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("time went backwards: {now} < {last}")]
    ClockSkew { now: Millis, last: Millis },
}

/// What one handled event produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoomStep {
    pub actions: Vec<EngineAction>,
    pub requests: Vec<BackendRequest>,
    pub appended: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct AgentUtterance {
    text: String,
    started_at: Millis,
    origin: TurnOrigin,
}

#[derive(Debug, Clone)]
pub struct RoomRuntime {
    header: RoomHeader,
    engine: Option<EngineState>,
    started: bool,
    transcript: Transcript,
    speech_starts: BTreeMap<ParticipantId, Millis>,
    agent_speaking: Option<AgentUtterance>,
    last_t: Millis,
    log: Vec<LogRecord>,
}

impl RoomRuntime {
    pub fn new(header: RoomHeader) -> Self {
        let engine = header
            .policy
            .clone()
            .map(|policy| EngineState::new(header.room.clone(), header.persona.name.clone(), policy, header.started_at));
        let transcript = Transcript::new(header.room.clone(), &header.config);
        let log = vec![LogRecord { t: header.started_at, body: LogBody::Header(Box::new(header.clone())) }];
        Self {
            last_t: header.started_at,
            header,
            engine,
            started: false,
            transcript,
            speech_starts: BTreeMap::new(),
            agent_speaking: None,
            log,
        }
    }

    pub fn header(&self) -> &RoomHeader {
        &self.header
    }

    pub fn room(&self) -> &RoomId {
        &self.header.room
    }

    pub fn engine(&self) -> Option<&EngineState> {
        self.engine.as_ref()
    }

    pub fn policy(&self) -> Option<&ModePolicy> {
        self.engine.as_ref().map(|e| &e.policy)
    }

    pub fn agent_location(&self) -> AgentLocation {
        self.policy().map(|p| p.agent_location.clone()).unwrap_or(AgentLocation::Absent)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// True while nothing but the header has been logged.
    pub fn is_pristine(&self) -> bool {
        self.log.len() == 1
    }

    /// Swaps the policy of a room nobody has used yet.
    pub fn reset_policy(&mut self, policy: ModePolicy) -> bool {
        if !self.is_pristine() {
            return false;
        }
        let mut header = self.header.clone();
        header.policy = Some(policy);
        *self = RoomRuntime::new(header);
        true
    }

    pub fn is_user_speaking(&self, who: &ParticipantId) -> bool {
        self.speech_starts.contains_key(who)
    }

    /// Builds the turn for a finished utterance. Empty text yields a turn
    /// that only signals a pause; it is never appended to the transcript.
    pub fn make_turn(&self, speaker: &ParticipantId, text: &str, now: Millis) -> Turn {
        let started_at = self.speech_starts.get(speaker).copied().unwrap_or(now).min(now);
        Turn {
            seq: self.transcript.next_seq(),
            speaker: speaker.clone(),
            room: self.header.room.clone(),
            text: text.to_string(),
            started_at,
            ended_at: now,
            origin: TurnOrigin::HumanSpeech,
        }
    }

    pub fn handle(&mut self, event: &EngineEvent, now: Millis) -> Result<RoomStep, RoomError> {
        if now < self.last_t {
            return Err(RoomError::ClockSkew { now, last: self.last_t });
        }
        self.last_t = now;
        self.log.push(LogRecord { t: now, body: LogBody::Event(event.clone()) });
        let mut step = RoomStep::default();

        if !self.started {
            self.started = true;
            if let Some(engine) = self.engine.as_mut() {
                step.actions.extend(engine.start(&self.header.config, now));
            }
        }

        match event {
            EngineEvent::UserSpeechStart { speaker, at, .. } => {
                self.speech_starts.insert(speaker.clone(), (*at).min(now));
            }
            EngineEvent::UserSpeechEnd { turn } => {
                self.speech_starts.remove(&turn.speaker);
                if !turn.text.trim().is_empty() {
                    self.append(turn.clone(), &mut step)?;
                }
            }
            EngineEvent::RoomChange { participant, from, .. } if from.as_ref() == Some(&self.header.room) => {
                self.speech_starts.remove(participant);
            }
            _ => {}
        }

        // Summaries and failed summaries belong to the transcript.
        if let EngineEvent::SummaryReady { request_id, text } = event {
            if let Some(next) = self.transcript.apply_summary(request_id, text).ok().flatten() {
                step.actions.push(next);
            }
            return self.finish(step, now);
        }
        if let EngineEvent::RequestFailed { request_id, .. } = event {
            if self.transcript.summary_in_flight() == Some(request_id) {
                self.transcript.summary_failed(request_id)?;
                return self.finish(step, now);
            }
        }
        if let EngineEvent::SuggestionReady { request_id, text } = event {
            let wanted = self.engine.as_ref().is_some_and(|e| e.outstanding.get(request_id) == Some(&Pending::Suggestion));
            if wanted {
                self.transcript.set_suggestion(text.clone());
            }
        }

        if let Some(engine) = self.engine.as_mut() {
            let actions = engine.apply(event, &self.header.config, now)?;
            step.actions.extend(actions);
        }
        self.finish(step, now)
    }

    /// Books agent turns, builds backend requests, and logs the actions.
    fn finish(&mut self, mut step: RoomStep, now: Millis) -> Result<RoomStep, RoomError> {
        let mut i = 0;
        while i < step.actions.len() {
            match &step.actions[i] {
                EngineAction::EmitAgentSpeech { text } => {
                    let origin = self
                        .engine
                        .as_ref()
                        .and_then(|e| e.window.as_ref())
                        .map(|w| w.reason.turn_origin())
                        .unwrap_or(TurnOrigin::Reactive);
                    self.agent_speaking = Some(AgentUtterance { text: text.clone(), started_at: now, origin });
                }
                EngineAction::MuteAgent | EngineAction::CloseWindow => {
                    if let Some(u) = self.agent_speaking.take() {
                        let turn = Turn {
                            seq: self.transcript.next_seq(),
                            speaker: self.header.agent.clone(),
                            room: self.header.room.clone(),
                            text: u.text,
                            started_at: u.started_at,
                            ended_at: now,
                            origin: u.origin,
                        };
                        self.append(turn, &mut step)?;
                    }
                }
                _ => {}
            }
            i += 1;
        }
        for action in &step.actions {
            if let Some(request) = self.build_request(action) {
                step.requests.push(request);
            }
            self.log.push(LogRecord { t: now, body: LogBody::Action(action.clone()) });
        }
        Ok(step)
    }

    fn append(&mut self, turn: Turn, step: &mut RoomStep) -> Result<(), RoomError> {
        if let Some(summary) = self.transcript.append_turn(turn.clone())? {
            step.actions.push(summary);
        }
        step.appended.push(turn);
        Ok(())
    }

    fn build_request(&self, action: &EngineAction) -> Option<BackendRequest> {
        let persona = &self.header.persona;
        let payload = match action {
            EngineAction::RequestCandidate { request_id } => (
                request_id,
                RequestPayload::Candidate { context: self.transcript.active_context(), persona: persona.clone() },
            ),
            EngineAction::RequestRelevance { request_id, candidate } => (
                request_id,
                RequestPayload::Relevance {
                    candidate: candidate.clone(),
                    recent_turns: self.transcript.recent(self.header.config.relevance_context_turns as usize),
                },
            ),
            EngineAction::RequestFollowUpCheck { request_id, utterance } => (
                request_id,
                RequestPayload::FollowUp {
                    utterance: utterance.clone(),
                    last_agent_utterance: self.transcript.last_agent_utterance().unwrap_or_default().to_string(),
                },
            ),
            EngineAction::RequestSuggestion { request_id } => (
                request_id,
                RequestPayload::Suggestion { context: self.transcript.active_context(), persona: persona.clone() },
            ),
            EngineAction::RequestSummary { request_id, .. } => (
                request_id,
                RequestPayload::Summary {
                    batch: self.transcript.batch_for(request_id)?,
                    prior_summary: self.transcript.summary.clone(),
                    persona: persona.clone(),
                },
            ),
            _ => return None,
        };
        Some(BackendRequest { request_id: payload.0.clone(), payload: payload.1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::policy_for;

    fn header() -> RoomHeader {
        RoomHeader {
            session_id: "s".into(),
            room: RoomId::main("main"),
            policy: Some(policy_for(Mode::Roundtable, AgentLocation::AtTable).unwrap()),
            config: ProtocolConfig::default(),
            persona: Persona::default(),
            agent: ParticipantId::agent("Lisa"),
            started_at: 0,
            logged: true,
        }
    }

    fn say(room: &mut RoomRuntime, who: &str, text: &str, start: Millis, end: Millis) -> RoomStep {
        let speaker = ParticipantId::human(who);
        room.handle(&EngineEvent::UserSpeechStart { speaker: speaker.clone(), room: room.room().clone(), at: start }, start)
            .unwrap();
        let turn = room.make_turn(&speaker, text, end);
        room.handle(&EngineEvent::UserSpeechEnd { turn }, end).unwrap()
    }

    #[test]
    fn fresh_room_logs_only_its_header() {
        let room = RoomRuntime::new(header());
        assert!(room.is_pristine());
        assert!(matches!(room.log()[0].body, LogBody::Header(_)));
    }

    #[test]
    fn invocation_requests_candidate_with_context() {
        let mut room = RoomRuntime::new(header());
        let step = say(&mut room, "D1", "Lisa, what do you think?", 0, 1_500);
        assert_eq!(step.appended.len(), 1);
        assert_eq!(step.appended[0].started_at, 0);
        let req = step.requests.iter().find(|r| matches!(r.payload, RequestPayload::Candidate { .. })).unwrap();
        match &req.payload {
            RequestPayload::Candidate { context, .. } => assert_eq!(context.verbatim_turns.len(), 1),
            _ => unreachable!(),
        }
    }

    #[test]
    fn agent_turn_booked_when_window_closes() {
        let mut room = RoomRuntime::new(header());
        let step = say(&mut room, "D1", "Lisa, ideas?", 0, 1_000);
        let req = step.requests.iter().find(|r| matches!(r.payload, RequestPayload::Candidate { .. })).unwrap();
        let step = room
            .handle(&EngineEvent::AgentCandidateReady { request_id: req.request_id.clone(), text: "purple pizza".into() }, 2_000)
            .unwrap();
        assert!(step.actions.iter().any(|a| matches!(a, EngineAction::EmitAgentSpeech { .. })));
        let expiry = step
            .actions
            .iter()
            .find_map(|a| match a {
                EngineAction::StartTimer { timer_id, kind: crate::model::TimerKind::WindowExpiry, after_ms } => {
                    Some((*timer_id, *after_ms))
                }
                _ => None,
            })
            .unwrap();
        let step = room
            .handle(
                &EngineEvent::TimerFired { timer_id: expiry.0, kind: crate::model::TimerKind::WindowExpiry },
                2_000 + expiry.1,
            )
            .unwrap();
        assert_eq!(step.appended.len(), 1);
        let agent_turn = &step.appended[0];
        assert_eq!(agent_turn.seq, 2);
        assert_eq!(agent_turn.origin, TurnOrigin::Reactive);
        assert!(agent_turn.is_well_formed());
        assert_eq!(room.transcript().last_agent_utterance(), Some("purple pizza"));
    }

    #[test]
    fn bare_pause_is_not_a_turn() {
        let mut room = RoomRuntime::new(header());
        let step = say(&mut room, "D1", "", 0, 500);
        assert!(step.appended.is_empty());
        assert!(room.transcript().is_empty());
    }

    #[test]
    fn lobby_has_no_engine() {
        let mut h = header();
        h.room = RoomId::new("lobby", crate::model::RoomKind::Lobby);
        h.policy = None;
        let mut room = RoomRuntime::new(h);
        let step = say(&mut room, "D1", "Lisa?", 0, 500);
        assert!(step.actions.is_empty());
        assert!(room.engine().is_none());
    }

    #[test]
    fn policy_reset_only_while_pristine() {
        let mut room = RoomRuntime::new(header());
        assert!(room.reset_policy(policy_for(Mode::Peripheral, AgentLocation::OuterCircle).unwrap()));
        say(&mut room, "D1", "hello", 0, 500);
        assert!(!room.reset_policy(policy_for(Mode::Roundtable, AgentLocation::AtTable).unwrap()));
    }

    #[test]
    fn clock_must_not_go_backwards() {
        let mut room = RoomRuntime::new(header());
        say(&mut room, "D1", "hello", 1_000, 2_000);
        let turn = room.make_turn(&ParticipantId::human("D2"), "hi", 1_500);
        assert!(matches!(
            room.handle(&EngineEvent::UserSpeechEnd { turn }, 1_500),
            Err(RoomError::ClockSkew { .. })
        ));
    }
}
