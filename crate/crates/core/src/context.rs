//! Per-room transcript with a bounded verbatim window and a running summary
//! of everything that has fallen out of it.
//!
//! Turns leave the verbatim window into a pending buffer. Whenever the
//! buffer reaches a multiple of the batch size and no summary is in
//! flight, a summary request is issued covering the whole buffer. A failed
//! request leaves the buffer as it was, so the next boundary retries with
//! the old and new turns together.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::config::ProtocolConfig;
use crate::model::{EngineAction, RequestId, RoomId, Turn};
use crate::modes::Capabilities;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("turn seq {got} out of order, expected {expected}")]
    SeqGap { expected: u64, got: u64 },
    #[error("turn belongs to room {got}, transcript is for {expected}")]
    WrongRoom { expected: String, got: String },
    #[error("no summary request {0} is outstanding")]
    UnknownRequestId(RequestId),
}

/// What the agent sees when generating.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActiveContext {
    pub verbatim_turns: Vec<Turn>,
    pub summary: String,
    pub current_suggestion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct InFlight {
    request_id: RequestId,
    seqs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transcript {
    pub room: RoomId,
    /// The verbatim window.
    pub turns: VecDeque<Turn>,
    pub summary: String,
    pub pending_summary_buffer: Vec<Turn>,
    /// Turns already folded into `summary`.
    pub summarized: Vec<Turn>,
    pub current_suggestion: Option<String>,
    active_turns: usize,
    batch_turns: usize,
    next_seq: u64,
    next_request: u64,
    in_flight: Option<InFlight>,
}

impl Transcript {
    pub fn new(room: RoomId, config: &ProtocolConfig) -> Self {
        Self {
            room,
            turns: VecDeque::new(),
            summary: String::new(),
            pending_summary_buffer: Vec::new(),
            summarized: Vec::new(),
            current_suggestion: None,
            active_turns: config.active_context_turns as usize,
            batch_turns: config.summary_batch_turns.max(1) as usize,
            next_seq: 1,
            next_request: 1,
            in_flight: None,
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn len(&self) -> usize {
        (self.next_seq - 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 1
    }

    /// Appends a turn; returns a summary request when the buffer reaches a
    /// batch boundary.
    pub fn append_turn(&mut self, turn: Turn) -> Result<Option<EngineAction>, ContextError> {
        if turn.seq != self.next_seq {
            return Err(ContextError::SeqGap { expected: self.next_seq, got: turn.seq });
        }
        if turn.room.id != self.room.id {
            return Err(ContextError::WrongRoom { expected: self.room.id.clone(), got: turn.room.id.clone() });
        }
        self.next_seq += 1;
        self.turns.push_back(turn);
        while self.turns.len() > self.active_turns {
            if let Some(old) = self.turns.pop_front() {
                self.pending_summary_buffer.push(old);
            }
        }
        let at_boundary = !self.pending_summary_buffer.is_empty()
            && self.pending_summary_buffer.len().is_multiple_of(self.batch_turns);
        Ok(if at_boundary { self.request_summary() } else { None })
    }

    fn request_summary(&mut self) -> Option<EngineAction> {
        if self.in_flight.is_some() || self.pending_summary_buffer.is_empty() {
            return None;
        }
        let request_id = RequestId(format!("{}/s{}", self.room.id, self.next_request));
        self.next_request += 1;
        let seqs: Vec<u64> = self.pending_summary_buffer.iter().map(|t| t.seq).collect();
        self.in_flight = Some(InFlight { request_id: request_id.clone(), seqs: seqs.clone() });
        Some(EngineAction::RequestSummary { request_id, turns: seqs })
    }

    /// Requests a summary of whatever is buffered, even a partial batch.
    /// Call it before closing a room so no pruned turn is left out.
    pub fn flush(&mut self) -> Option<EngineAction> {
        self.request_summary()
    }

    pub fn summary_in_flight(&self) -> Option<&RequestId> {
        self.in_flight.as_ref().map(|f| &f.request_id)
    }

    /// Turns covered by the in-flight summary request.
    pub fn batch_for(&self, request_id: &RequestId) -> Option<Vec<Turn>> {
        let f = self.in_flight.as_ref().filter(|f| &f.request_id == request_id)?;
        Some(self.pending_summary_buffer.iter().filter(|t| f.seqs.contains(&t.seq)).cloned().collect())
    }

    /// Installs a new running summary. Returns a follow-up request if
    /// another full batch accumulated in the meantime.
    pub fn apply_summary(&mut self, request_id: &RequestId, text: &str) -> Result<Option<EngineAction>, ContextError> {
        let flight = match &self.in_flight {
            Some(f) if &f.request_id == request_id => self.in_flight.take().unwrap(),
            _ => return Err(ContextError::UnknownRequestId(request_id.clone())),
        };
        self.summary = text.to_string();
        let (done, rest): (Vec<Turn>, Vec<Turn>) =
            self.pending_summary_buffer.drain(..).partition(|t| flight.seqs.contains(&t.seq));
        self.summarized.extend(done);
        self.pending_summary_buffer = rest;
        Ok(if self.pending_summary_buffer.len() >= self.batch_turns { self.request_summary() } else { None })
    }

    /// The summary request will not be answered; keep the batch for the
    /// next boundary.
    pub fn summary_failed(&mut self, request_id: &RequestId) -> Result<(), ContextError> {
        match &self.in_flight {
            Some(f) if &f.request_id == request_id => {
                self.in_flight = None;
                Ok(())
            }
            _ => Err(ContextError::UnknownRequestId(request_id.clone())),
        }
    }

    pub fn set_suggestion(&mut self, text: String) {
        self.current_suggestion = Some(text);
    }

    pub fn active_context(&self) -> ActiveContext {
        ActiveContext {
            verbatim_turns: self.turns.iter().cloned().collect(),
            summary: self.summary.clone(),
            current_suggestion: self.current_suggestion.clone(),
        }
    }

    /// The last `n` turns, for relevance judgments.
    pub fn recent(&self, n: usize) -> Vec<Turn> {
        let skip = self.turns.len().saturating_sub(n);
        self.turns.iter().skip(skip).cloned().collect()
    }

    pub fn last_agent_utterance(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.speaker.is_agent()).map(|t| t.text.as_str())
    }

    /// The full history in seq order.
    pub fn history(&self) -> Vec<Turn> {
        let mut all: Vec<Turn> = self
            .summarized
            .iter()
            .chain(self.pending_summary_buffer.iter())
            .chain(self.turns.iter())
            .cloned()
            .collect();
        all.sort_by_key(|t| t.seq);
        all
    }
}

/// Whether a suggestion tick should ask for a fresh suggestion. Ticks are
/// skipped while the hand is raised, and when the agent is absent.
pub fn suggestion_tick(hand_raised: bool, capabilities: &Capabilities) -> bool {
    !hand_raised && capabilities.any()
}
