//! Control-plane messages between clients and the session service.
//!
//! Each message is one JSON object tagged by `type` (snake_case) with
//! camelCase fields. On a stream transport every message is one frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Millis, ParticipantId, RoomId, Turn};
use crate::modes::{AgentLocation, Capabilities, Mode, ModeCommand, UserControl};

/// What a client sees of its room.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoomView {
    pub session_id: String,
    pub room: RoomId,
    pub mode: Option<Mode>,
    pub agent_location: AgentLocation,
    pub capabilities: Capabilities,
    pub user_controls: BTreeSet<UserControl>,
    pub participants: Vec<ParticipantId>,
    pub hand_raised: bool,
    pub window_open: bool,
    /// The last few turns, oldest first.
    pub recent_turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum WireMessage {
    // client -> server
    ClientHello {
        session_id: String,
        participant: ParticipantId,
    },
    JoinRoom {
        room: String,
    },
    SpeechStart {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<Millis>,
    },
    SpeechEnd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<Millis>,
    },
    /// A finished utterance. Client timestamps are recorded for reference
    /// only; the server clock decides.
    Utterance {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        started_at: Option<Millis>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ended_at: Option<Millis>,
    },
    ModeCommand(ModeCommand),
    HostMove {
        participant: String,
        room: String,
    },
    CreateSession {
        session_id: String,
        mode: Mode,
    },
    SetMode {
        room: String,
        mode: Mode,
    },

    // server -> client
    StateSnapshot {
        view: RoomView,
    },
    AgentSpeech {
        room: String,
        text: String,
    },
    HandRaised {
        room: String,
        ping: bool,
    },
    HandLowered {
        room: String,
    },
    TurnAppended {
        turn: Turn,
    },
    CallBackRequest {
        from: String,
        room: String,
    },
    Ack {
        detail: String,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    NotJoined,
    NoSuchSession,
    SessionExists,
    NoSuchRoom,
    NoSuchParticipant,
    NotHost,
    NotPermitted,
    NoSuchPartner,
    ModeLocked,
    Internal,
}

impl WireMessage {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        WireMessage::Error { code, detail: detail.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }
}
