//! Shared vocabulary: participants, rooms, turns, and the event/action
//! alphabet of the turn-taking engine.
//!
//! Every type here has a canonical JSON form. Struct fields are camelCase,
//! enum tags are snake_case, and maps are ordered so that encoding is
//! byte-stable across runs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::modes::{ModeCommand, ModePolicy};

/// Milliseconds on the session clock (virtual in simulation, wall-clock
/// since session creation when live).
pub type Millis = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantKind {
    Human,
    Agent,
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParticipantId {
    pub id: String,
    pub kind: ParticipantKind,
}

impl ParticipantId {
    pub fn human(id: impl Into<String>) -> Self {
        Self { id: id.into(), kind: ParticipantKind::Human }
    }

    pub fn agent(id: impl Into<String>) -> Self {
        Self { id: id.into(), kind: ParticipantKind::Agent }
    }

    pub fn host(id: impl Into<String>) -> Self {
        Self { id: id.into(), kind: ParticipantKind::Host }
    }

    pub fn is_agent(&self) -> bool {
        self.kind == ParticipantKind::Agent
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomKind {
    Lobby,
    Training,
    Main,
    Breakout { owner: ParticipantId },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoomId {
    pub id: String,
    pub kind: RoomKind,
}

impl RoomId {
    pub fn new(id: impl Into<String>, kind: RoomKind) -> Self {
        Self { id: id.into(), kind }
    }

    pub fn main(id: impl Into<String>) -> Self {
        Self::new(id, RoomKind::Main)
    }

    pub fn breakout_owner(&self) -> Option<&ParticipantId> {
        match &self.kind {
            RoomKind::Breakout { owner } => Some(owner),
            _ => None,
        }
    }
}

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOrigin {
    Reactive,
    Proactive,
    HumanSpeech,
}

/// One utterance by one speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Turn {
    pub seq: u64,
    pub speaker: ParticipantId,
    pub room: RoomId,
    pub text: String,
    pub started_at: Millis,
    pub ended_at: Millis,
    pub origin: TurnOrigin,
}

impl Turn {
    /// Checks the per-turn invariants (timing order, agent origin).
    pub fn is_well_formed(&self) -> bool {
        if self.ended_at < self.started_at {
            return false;
        }
        match self.speaker.kind {
            ParticipantKind::Agent => self.origin != TurnOrigin::HumanSpeech,
            ParticipantKind::Human => self.origin == TurnOrigin::HumanSpeech,
            ParticipantKind::Host => false,
        }
    }
}

/// Correlates a backend request with the event that answers it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub String);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimerId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerKind {
    WindowExpiry,
    HandTimeout,
    ForcedRaise,
    LullCheck,
    SuggestionTick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowReason {
    DirectInvocation,
    FollowUp,
    HandRaiseAccepted,
    ProactiveLull,
}

impl WindowReason {
    /// Windows opened in direct response to a user utterance. Only these
    /// may be extended.
    pub fn is_extendable(self) -> bool {
        matches!(self, WindowReason::DirectInvocation | WindowReason::FollowUp)
    }

    pub fn turn_origin(self) -> TurnOrigin {
        match self {
            WindowReason::ProactiveLull => TurnOrigin::Proactive,
            _ => TurnOrigin::Reactive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Candidate,
    Relevance,
    FollowUp,
    Summary,
    Suggestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    Error,
}

/// Input alphabet of a room's engine loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum EngineEvent {
    UserSpeechStart { speaker: ParticipantId, room: RoomId, at: Millis },
    UserSpeechEnd { turn: Turn },
    AgentCandidateReady { request_id: RequestId, text: String },
    RelevanceVerdict { request_id: RequestId, relevant: bool },
    FollowUpVerdict { request_id: RequestId, is_follow_up: bool },
    TimerFired { timer_id: TimerId, kind: TimerKind },
    ModeCommand { cmd: ModeCommand },
    RoomChange { participant: ParticipantId, from: Option<RoomId>, to: Option<RoomId> },
    SuggestionReady { request_id: RequestId, text: String },
    SummaryReady { request_id: RequestId, text: String },
    /// A backend request that will never be answered.
    RequestFailed { request_id: RequestId, failure: FailureKind },
}

impl EngineEvent {
    /// Tie-break priority for events sharing a timestamp; lower runs first.
    pub fn priority(&self) -> u8 {
        match self {
            EngineEvent::UserSpeechStart { .. } => 0,
            EngineEvent::UserSpeechEnd { .. } => 1,
            EngineEvent::ModeCommand { .. } | EngineEvent::RoomChange { .. } => 2,
            EngineEvent::AgentCandidateReady { .. }
            | EngineEvent::RelevanceVerdict { .. }
            | EngineEvent::FollowUpVerdict { .. }
            | EngineEvent::SuggestionReady { .. }
            | EngineEvent::SummaryReady { .. }
            | EngineEvent::RequestFailed { .. } => 3,
            EngineEvent::TimerFired { .. } => 4,
        }
    }

    pub fn request_id(&self) -> Option<&RequestId> {
        match self {
            EngineEvent::AgentCandidateReady { request_id, .. }
            | EngineEvent::RelevanceVerdict { request_id, .. }
            | EngineEvent::FollowUpVerdict { request_id, .. }
            | EngineEvent::SuggestionReady { request_id, .. }
            | EngineEvent::SummaryReady { request_id, .. }
            | EngineEvent::RequestFailed { request_id, .. } => Some(request_id),
            _ => None,
        }
    }
}

/// Structured payload of [`EngineAction::Log`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum EngineNote {
    PolicyUpdated { policy: ModePolicy },
    UnknownRequest { request_id: RequestId },
    StaleTimer { timer_id: TimerId, kind: TimerKind },
    CandidateDiscarded {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<RequestId>,
        reason: String,
    },
    RequestFailed { request_id: RequestId, kind: RequestKind, failure: FailureKind },
    CommandIgnored { detail: String },
}

/// Output alphabet of the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum EngineAction {
    OpenWindow { reason: WindowReason, budget_ms: Millis },
    ExtendWindow,
    CloseWindow,
    MuteAgent,
    EmitAgentSpeech { text: String },
    AbortGeneration { request_id: RequestId },
    RaiseHand { ping: bool },
    LowerHand,
    RequestCandidate { request_id: RequestId },
    RequestRelevance { request_id: RequestId, candidate: String },
    RequestFollowUpCheck { request_id: RequestId, utterance: String },
    RequestSuggestion { request_id: RequestId },
    /// Sequence numbers of the turns to fold into the running summary.
    RequestSummary { request_id: RequestId, turns: Vec<u64> },
    StartTimer { timer_id: TimerId, kind: TimerKind, after_ms: Millis },
    CancelTimer { timer_id: TimerId, kind: TimerKind },
    Log { entry: EngineNote },
}

impl EngineAction {
    pub fn request(&self) -> Option<(&RequestId, RequestKind)> {
        match self {
            EngineAction::RequestCandidate { request_id } => Some((request_id, RequestKind::Candidate)),
            EngineAction::RequestRelevance { request_id, .. } => Some((request_id, RequestKind::Relevance)),
            EngineAction::RequestFollowUpCheck { request_id, .. } => Some((request_id, RequestKind::FollowUp)),
            EngineAction::RequestSuggestion { request_id } => Some((request_id, RequestKind::Suggestion)),
            EngineAction::RequestSummary { request_id, .. } => Some((request_id, RequestKind::Summary)),
            _ => None,
        }
    }
}
