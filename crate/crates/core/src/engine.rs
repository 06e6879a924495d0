//! The per-room turn-taking state machine.
//!
//! The engine never talks to a backend or a clock. It consumes one
//! [`EngineEvent`] at a time together with the current session time and
//! returns the actions the host loop must carry out: open or close the
//! speaking window, emit speech, raise the hand, issue backend requests,
//! and arm or cancel timers. Backend answers come back later as events
//! carrying the request id the engine allocated.
//!
//! Timers and requests are numbered by the engine itself, so a replay of
//! the same event sequence yields the same ids and the same action log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::ProtocolConfig;
use crate::context;
use crate::model::{
    EngineAction, EngineEvent, EngineNote, FailureKind, Millis, ParticipantId, RequestId, RequestKind, RoomId,
    TimerId, TimerKind, Turn, TurnOrigin, WindowReason,
};
use crate::modes::{command_effect, AgentLocation, CommandEffect, ModeCommand, ModePolicy};
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Window {
    pub reason: WindowReason,
    pub opens_at: Millis,
    pub budget_ms: Millis,
    pub extended_once: bool,
    /// Candidate request this window is waiting on.
    pub candidate: Option<RequestId>,
    pub speech_started_at: Option<Millis>,
    /// Set once a user talks over the window; nothing more is emitted.
    pub muted: bool,
}

impl Window {
    pub fn deadline(&self) -> Millis {
        let periods = if self.extended_once { 2 } else { 1 };
        self.opens_at + self.budget_ms * periods
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hand {
    pub raised_at: Millis,
    /// What the agent will say if invited; empty while a forced raise is
    /// still waiting for its candidate.
    pub pending_candidate: String,
    pub awaiting: Option<RequestId>,
}

/// Why a request is outstanding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "purpose", rename_all = "snake_case")]
pub enum Pending {
    WindowCandidate,
    ProactiveCandidate,
    HandCandidate,
    ForcedHandCandidate,
    Relevance { candidate: String },
    FollowUp,
    Suggestion,
}

impl Pending {
    pub fn kind(&self) -> RequestKind {
        match self {
            Pending::WindowCandidate
            | Pending::ProactiveCandidate
            | Pending::HandCandidate
            | Pending::ForcedHandCandidate => RequestKind::Candidate,
            Pending::Relevance { .. } => RequestKind::Relevance,
            Pending::FollowUp => RequestKind::FollowUp,
            Pending::Suggestion => RequestKind::Suggestion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineState {
    pub room: RoomId,
    pub agent_name: String,
    /// When the room's agent came into being; stands in for the agent's
    /// last speech before it has spoken at all.
    pub started_at: Millis,
    pub window: Option<Window>,
    pub hand: Option<Hand>,
    pub last_agent_speech_end_at: Option<Millis>,
    pub last_user_speech_end_at: Option<Millis>,
    /// Last agent speech or hand raise.
    pub last_contribution_at: Option<Millis>,
    pub turns_since_contribution: u32,
    pub consecutive_proactive: u32,
    pub outstanding: BTreeMap<RequestId, Pending>,
    pub users_speaking: BTreeSet<ParticipantId>,
    pub policy: ModePolicy,
    pub timers: BTreeMap<TimerKind, TimerId>,
    next_request: u64,
    next_timer: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("engine invariant breached: {0}")]
    InvariantBreach(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EngineState,
    pub actions: Vec<EngineAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandDecision {
    RequestCandidateThenRelevance,
    ForcedRaise,
    NoAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LullDecision {
    ProposeProactive,
    /// Everything but the minimum gap since the agent last spoke allows a
    /// proactive turn; look again after this many ms.
    RetryAfter(Millis),
    NoAction,
}

/// True iff `agent_name` occurs in `text` as a whole word, ignoring case
/// and punctuation.
pub fn detect_direct_invocation(text: &str, agent_name: &str) -> bool {
    text::mentions_name(text, agent_name)
}

/// True iff the agent has spoken and `turn` started no later than the
/// follow-up grace period after the agent's speech ended.
pub fn should_check_follow_up(state: &EngineState, turn: &Turn, config: &ProtocolConfig) -> bool {
    state
        .last_agent_speech_end_at
        .is_some_and(|end| turn.started_at - end <= config.follow_up_grace_ms)
}

/// Decision taken at a user pause while no window is open.
pub fn evaluate_hand_raise(state: &EngineState, pause_at: Millis, config: &ProtocolConfig) -> HandDecision {
    if state.hand.is_some() || state.window.is_some() || !state.policy.capabilities.hand_raise {
        return HandDecision::NoAction;
    }
    let last_spoke = state.last_agent_speech_end_at.unwrap_or(state.started_at);
    if pause_at - last_spoke > config.forced_raise_after_ms {
        return HandDecision::ForcedRaise;
    }
    let evaluating = state
        .outstanding
        .values()
        .any(|p| matches!(p, Pending::HandCandidate | Pending::Relevance { .. }));
    if evaluating {
        return HandDecision::NoAction;
    }
    let since = pause_at - state.last_contribution_at.unwrap_or(state.started_at);
    if since >= config.hand_raise_min_gap_ms || state.turns_since_contribution >= config.hand_raise_min_turns {
        HandDecision::RequestCandidateThenRelevance
    } else {
        HandDecision::NoAction
    }
}

/// Decision taken when the lull timer fires.
pub fn evaluate_lull(state: &EngineState, now: Millis, config: &ProtocolConfig) -> LullDecision {
    let pending_proactive = state.outstanding.values().any(|p| *p == Pending::ProactiveCandidate);
    if !state.users_speaking.is_empty()
        || state.window.is_some()
        || state.hand.is_some()
        || pending_proactive
        || !state.policy.capabilities.proactive_speech
        || state.consecutive_proactive >= config.max_consecutive_proactive
    {
        return LullDecision::NoAction;
    }
    if now - state.silence_since() < config.lull_threshold_ms {
        return LullDecision::NoAction;
    }
    if let Some(end) = state.last_agent_speech_end_at {
        let wait = end + config.min_proactive_gap_ms - now;
        if wait > 0 {
            return LullDecision::RetryAfter(wait);
        }
    }
    LullDecision::ProposeProactive
}

/// Updates the consecutive-proactive counter for a newly appended turn.
pub fn reset_consecutive_proactive(mut state: EngineState, turn: &Turn) -> EngineState {
    state.count_turn_origin(turn.origin);
    state
}

/// Handles an expired hand-raise timer: lowers the hand if it is still up.
pub fn on_hand_timeout(mut state: EngineState, _now: Millis) -> (EngineState, Vec<EngineAction>) {
    let mut out = Vec::new();
    if state.hand.take().is_some() {
        out.push(EngineAction::LowerHand);
    }
    (state, out)
}

struct Step<'a> {
    config: &'a ProtocolConfig,
    now: Millis,
    out: Vec<EngineAction>,
}

impl EngineState {
    pub fn new(room: RoomId, agent_name: impl Into<String>, policy: ModePolicy, started_at: Millis) -> Self {
        Self {
            room,
            agent_name: agent_name.into(),
            started_at,
            window: None,
            hand: None,
            last_agent_speech_end_at: None,
            last_user_speech_end_at: None,
            last_contribution_at: None,
            turns_since_contribution: 0,
            consecutive_proactive: 0,
            outstanding: BTreeMap::new(),
            users_speaking: BTreeSet::new(),
            policy,
            timers: BTreeMap::new(),
            next_request: 1,
            next_timer: 1,
        }
    }

    /// Actions to run when the room comes up: arms the suggestion refresh.
    /// Does nothing for an agent without capabilities; [`Self::set_policy`]
    /// arms the refresh once it gains some.
    pub fn start(&mut self, config: &ProtocolConfig, now: Millis) -> Vec<EngineAction> {
        let mut step = Step { config, now, out: Vec::new() };
        self.arm_suggestions(&mut step);
        step.out
    }

    fn arm_suggestions(&mut self, step: &mut Step<'_>) {
        if self.policy.capabilities.any() && !self.timers.contains_key(&TimerKind::SuggestionTick) {
            self.start_timer(step, TimerKind::SuggestionTick, step.config.suggestion_period_ms);
        }
    }

    /// Pure transition: the receiver is left untouched.
    pub fn step(&self, event: &EngineEvent, config: &ProtocolConfig, now: Millis) -> Result<Transition, EngineError> {
        let mut state = self.clone();
        let actions = state.apply(event, config, now)?;
        Ok(Transition { state, actions })
    }

    /// In-place transition used by the room loop.
    pub fn apply(
        &mut self,
        event: &EngineEvent,
        config: &ProtocolConfig,
        now: Millis,
    ) -> Result<Vec<EngineAction>, EngineError> {
        let mut step = Step { config, now, out: Vec::new() };
        match event {
            EngineEvent::UserSpeechStart { speaker, .. } => self.on_speech_start(&mut step, speaker),
            EngineEvent::UserSpeechEnd { turn } => self.on_speech_end(&mut step, turn),
            EngineEvent::AgentCandidateReady { request_id, text } => self.on_candidate(&mut step, request_id, text),
            EngineEvent::RelevanceVerdict { request_id, relevant } => {
                self.on_relevance(&mut step, request_id, *relevant)
            }
            EngineEvent::FollowUpVerdict { request_id, is_follow_up } => {
                self.on_follow_up(&mut step, request_id, *is_follow_up)
            }
            EngineEvent::TimerFired { timer_id, kind } => self.on_timer(&mut step, *timer_id, *kind),
            EngineEvent::ModeCommand { cmd } => self.on_mode_command(&mut step, cmd),
            EngineEvent::RoomChange { participant, from, .. } => {
                if from.as_ref() == Some(&self.room) && self.users_speaking.remove(participant) {
                    self.maybe_start_lull_check(&mut step);
                }
            }
            EngineEvent::SuggestionReady { request_id, .. } => match self.outstanding.get(request_id) {
                Some(Pending::Suggestion) => {
                    self.outstanding.remove(request_id);
                }
                _ => self.unknown_request(&mut step, request_id),
            },
            // Summaries belong to the transcript, not the engine.
            EngineEvent::SummaryReady { .. } => {}
            EngineEvent::RequestFailed { request_id, failure } => self.on_request_failed(&mut step, request_id, *failure),
        }
        self.check_invariants(config)?;
        Ok(step.out)
    }

    pub fn is_window_open(&self) -> bool {
        self.window.is_some()
    }

    pub fn is_hand_raised(&self) -> bool {
        self.hand.is_some()
    }

    /// Start of the current silence: the later of the last user and agent
    /// speech ends.
    pub fn silence_since(&self) -> Millis {
        match (self.last_user_speech_end_at, self.last_agent_speech_end_at) {
            (Some(u), Some(a)) => u.max(a),
            (Some(t), None) | (None, Some(t)) => t,
            (None, None) => self.started_at,
        }
    }

    /// Replaces the capability snapshot, closing whatever the new policy
    /// no longer allows.
    pub fn set_policy(&mut self, policy: ModePolicy, config: &ProtocolConfig, now: Millis) -> Vec<EngineAction> {
        let mut step = Step { config, now, out: Vec::new() };
        self.replace_policy(&mut step, policy);
        step.out
    }

    fn count_turn_origin(&mut self, origin: TurnOrigin) {
        match origin {
            TurnOrigin::Proactive => self.consecutive_proactive += 1,
            TurnOrigin::Reactive | TurnOrigin::HumanSpeech => self.consecutive_proactive = 0,
        }
    }

    fn new_request(&mut self, pending: Pending) -> RequestId {
        let id = RequestId(format!("{}/e{}", self.room.id, self.next_request));
        self.next_request += 1;
        self.outstanding.insert(id.clone(), pending);
        id
    }

    fn start_timer(&mut self, step: &mut Step<'_>, kind: TimerKind, after_ms: Millis) {
        self.cancel_timer(step, kind);
        let timer_id = TimerId(self.next_timer);
        self.next_timer += 1;
        self.timers.insert(kind, timer_id);
        step.out.push(EngineAction::StartTimer { timer_id, kind, after_ms: after_ms.max(0) });
    }

    fn cancel_timer(&mut self, step: &mut Step<'_>, kind: TimerKind) {
        if let Some(timer_id) = self.timers.remove(&kind) {
            step.out.push(EngineAction::CancelTimer { timer_id, kind });
        }
    }

    fn unknown_request(&self, step: &mut Step<'_>, request_id: &RequestId) {
        step.out.push(EngineAction::Log { entry: EngineNote::UnknownRequest { request_id: request_id.clone() } });
    }

    fn discard(&self, step: &mut Step<'_>, request_id: &RequestId, reason: &str) {
        step.out.push(EngineAction::Log {
            entry: EngineNote::CandidateDiscarded { request_id: Some(request_id.clone()), reason: reason.to_string() },
        });
    }

    fn maybe_start_lull_check(&mut self, step: &mut Step<'_>) {
        if self.users_speaking.is_empty() && self.policy.capabilities.proactive_speech {
            self.start_timer(step, TimerKind::LullCheck, step.config.lull_threshold_ms);
        }
    }

    fn on_speech_start(&mut self, step: &mut Step<'_>, speaker: &ParticipantId) {
        if let Some(window) = self.window.as_mut() {
            step.out.push(EngineAction::MuteAgent);
            if !window.muted {
                window.muted = true;
                if window.speech_started_at.is_some() {
                    self.last_agent_speech_end_at = Some(step.now);
                }
                if let Some(request_id) = window.candidate.take() {
                    self.outstanding.remove(&request_id);
                    step.out.push(EngineAction::AbortGeneration { request_id });
                }
            }
        }
        self.users_speaking.insert(speaker.clone());
        self.cancel_timer(step, TimerKind::LullCheck);

        let proactive: Vec<RequestId> = self
            .outstanding
            .iter()
            .filter(|(_, p)| **p == Pending::ProactiveCandidate)
            .map(|(id, _)| id.clone())
            .collect();
        for request_id in proactive {
            self.outstanding.remove(&request_id);
            step.out.push(EngineAction::AbortGeneration { request_id });
        }
    }

    fn on_speech_end(&mut self, step: &mut Step<'_>, turn: &Turn) {
        self.users_speaking.remove(&turn.speaker);
        self.last_user_speech_end_at = Some(step.now);
        if !turn.text.trim().is_empty() {
            self.count_turn_origin(TurnOrigin::HumanSpeech);
            self.turns_since_contribution += 1;
        }
        self.maybe_start_lull_check(step);

        let caps = self.policy.capabilities;
        if caps.reactive_speech && detect_direct_invocation(&turn.text, &self.agent_name) {
            if self.hand.is_some() {
                self.accept_hand(step);
            } else {
                self.open_reactive(step, WindowReason::DirectInvocation);
            }
            return;
        }
        if caps.reactive_speech && should_check_follow_up(self, turn, step.config) {
            let request_id = self.new_request(Pending::FollowUp);
            step.out.push(EngineAction::RequestFollowUpCheck { request_id, utterance: turn.text.clone() });
            return;
        }
        self.pause(step);
    }

    /// Hand-raise evaluation at a user pause.
    fn pause(&mut self, step: &mut Step<'_>) {
        match evaluate_hand_raise(self, step.now, step.config) {
            HandDecision::ForcedRaise => {
                let request_id = self.new_request(Pending::ForcedHandCandidate);
                self.raise_hand(step, String::new(), Some(request_id.clone()));
                step.out.push(EngineAction::RequestCandidate { request_id });
            }
            HandDecision::RequestCandidateThenRelevance => {
                let request_id = self.new_request(Pending::HandCandidate);
                step.out.push(EngineAction::RequestCandidate { request_id });
            }
            HandDecision::NoAction => {}
        }
    }

    fn raise_hand(&mut self, step: &mut Step<'_>, candidate: String, awaiting: Option<RequestId>) {
        self.hand = Some(Hand { raised_at: step.now, pending_candidate: candidate, awaiting });
        self.last_contribution_at = Some(step.now);
        self.turns_since_contribution = 0;
        step.out.push(EngineAction::RaiseHand { ping: self.policy.capabilities.hand_raise_ping });
        self.start_timer(step, TimerKind::HandTimeout, step.config.hand_timeout_ms);
    }

    fn lower_hand(&mut self, step: &mut Step<'_>) {
        if let Some(hand) = self.hand.take() {
            self.cancel_timer(step, TimerKind::HandTimeout);
            if let Some(request_id) = hand.awaiting {
                self.outstanding.remove(&request_id);
                step.out.push(EngineAction::AbortGeneration { request_id });
            }
            step.out.push(EngineAction::LowerHand);
        }
    }

    /// Makes room for a new window. Returns false when an unmuted window is
    /// already open, in which case the trigger is ignored.
    fn clear_for_window(&mut self, step: &mut Step<'_>) -> bool {
        match &self.window {
            None => true,
            Some(w) if w.muted => {
                self.close_window(step);
                true
            }
            Some(_) => {
                step.out.push(EngineAction::Log {
                    entry: EngineNote::CommandIgnored { detail: "speaking window already open".into() },
                });
                false
            }
        }
    }

    fn open_window(&mut self, step: &mut Step<'_>, reason: WindowReason) {
        let budget_ms = step.config.window_budget_ms;
        self.window = Some(Window {
            reason,
            opens_at: step.now,
            budget_ms,
            extended_once: false,
            candidate: None,
            speech_started_at: None,
            muted: false,
        });
        step.out.push(EngineAction::OpenWindow { reason, budget_ms });
        self.start_timer(step, TimerKind::WindowExpiry, budget_ms);
    }

    fn open_reactive(&mut self, step: &mut Step<'_>, reason: WindowReason) {
        if !self.clear_for_window(step) {
            return;
        }
        self.open_window(step, reason);
        let request_id = self.new_request(Pending::WindowCandidate);
        if let Some(w) = self.window.as_mut() {
            w.candidate = Some(request_id.clone());
        }
        step.out.push(EngineAction::RequestCandidate { request_id });
    }

    fn accept_hand(&mut self, step: &mut Step<'_>) {
        if self.hand.is_none() || !self.clear_for_window(step) {
            return;
        }
        let Some(hand) = self.hand.take() else { return };
        self.cancel_timer(step, TimerKind::HandTimeout);
        self.open_window(step, WindowReason::HandRaiseAccepted);
        if !hand.pending_candidate.is_empty() {
            self.emit_speech(step, hand.pending_candidate);
            return;
        }
        let request_id = match hand.awaiting {
            Some(id) => {
                self.outstanding.insert(id.clone(), Pending::WindowCandidate);
                id
            }
            None => {
                let id = self.new_request(Pending::WindowCandidate);
                step.out.push(EngineAction::RequestCandidate { request_id: id.clone() });
                id
            }
        };
        if let Some(w) = self.window.as_mut() {
            w.candidate = Some(request_id);
        }
    }

    /// Emits `text` into the open window and schedules the window to close
    /// when the speech is done or the budget runs out, whichever is first.
    fn emit_speech(&mut self, step: &mut Step<'_>, text: String) {
        let users_busy = !self.users_speaking.is_empty();
        let Some(window) = self.window.as_mut() else { return };
        if window.muted || users_busy {
            window.muted = true;
            step.out.push(EngineAction::Log {
                entry: EngineNote::CandidateDiscarded {
                    request_id: None,
                    reason: "user speaking".into(),
                },
            });
            return;
        }
        window.speech_started_at = Some(step.now);
        let origin = window.reason.turn_origin();
        let deadline = window.deadline();
        let words = text::word_count(&text).max(1) as Millis;
        step.out.push(EngineAction::EmitAgentSpeech { text });
        self.count_turn_origin(origin);
        let ends = (step.now + words * step.config.agent_speech_ms_per_word).min(deadline);
        self.start_timer(step, TimerKind::WindowExpiry, ends - step.now);
    }

    fn close_window(&mut self, step: &mut Step<'_>) {
        let Some(window) = self.window.take() else { return };
        self.cancel_timer(step, TimerKind::WindowExpiry);
        step.out.push(EngineAction::CloseWindow);
        if let Some(request_id) = window.candidate {
            self.outstanding.remove(&request_id);
            step.out.push(EngineAction::AbortGeneration { request_id });
        }
        if window.speech_started_at.is_some() {
            if !window.muted {
                self.last_agent_speech_end_at = Some(step.now);
            }
            self.last_contribution_at = Some(step.now);
            self.turns_since_contribution = 0;
        }
        self.maybe_start_lull_check(step);
    }

    fn on_candidate(&mut self, step: &mut Step<'_>, request_id: &RequestId, text: &str) {
        let Some(pending) = self.outstanding.remove(request_id) else {
            return self.unknown_request(step, request_id);
        };
        if text.trim().is_empty() {
            return self.discard(step, request_id, "empty candidate");
        }
        match pending {
            Pending::WindowCandidate => {
                let matches = self.window.as_ref().is_some_and(|w| w.candidate.as_ref() == Some(request_id));
                if !matches {
                    return self.discard(step, request_id, "window closed");
                }
                if let Some(w) = self.window.as_mut() {
                    w.candidate = None;
                }
                self.emit_speech(step, text.to_string());
            }
            Pending::ProactiveCandidate => {
                // The lull must still hold; user speech would have aborted us.
                let still_quiet = evaluate_lull(self, step.now, step.config) == LullDecision::ProposeProactive;
                if !still_quiet {
                    return self.discard(step, request_id, "lull ended");
                }
                self.open_window(step, WindowReason::ProactiveLull);
                self.emit_speech(step, text.to_string());
            }
            Pending::HandCandidate => {
                if self.hand.is_some() || self.window.is_some() || !self.policy.capabilities.hand_raise {
                    return self.discard(step, request_id, "hand no longer applicable");
                }
                let candidate = text.to_string();
                let relevance = self.new_request(Pending::Relevance { candidate: candidate.clone() });
                step.out.push(EngineAction::RequestRelevance { request_id: relevance, candidate });
            }
            Pending::ForcedHandCandidate => match self.hand.as_mut() {
                Some(hand) if hand.awaiting.as_ref() == Some(request_id) => {
                    hand.pending_candidate = text.to_string();
                    hand.awaiting = None;
                }
                _ => self.discard(step, request_id, "hand lowered"),
            },
            other => {
                self.outstanding.insert(request_id.clone(), other);
                self.unknown_request(step, request_id);
            }
        }
    }

    fn on_relevance(&mut self, step: &mut Step<'_>, request_id: &RequestId, relevant: bool) {
        match self.outstanding.get(request_id) {
            Some(Pending::Relevance { .. }) => {}
            _ => return self.unknown_request(step, request_id),
        }
        let Some(Pending::Relevance { candidate }) = self.outstanding.remove(request_id) else { return };
        if relevant && self.hand.is_none() && self.window.is_none() && self.policy.capabilities.hand_raise {
            self.raise_hand(step, candidate, None);
        }
    }

    fn on_follow_up(&mut self, step: &mut Step<'_>, request_id: &RequestId, is_follow_up: bool) {
        if self.outstanding.get(request_id) != Some(&Pending::FollowUp) {
            return self.unknown_request(step, request_id);
        }
        self.outstanding.remove(request_id);
        if is_follow_up && self.policy.capabilities.reactive_speech {
            self.lower_hand(step);
            self.open_reactive(step, WindowReason::FollowUp);
        } else {
            self.pause(step);
        }
    }

    fn on_timer(&mut self, step: &mut Step<'_>, timer_id: TimerId, kind: TimerKind) {
        if self.timers.get(&kind) != Some(&timer_id) {
            return;
        }
        self.timers.remove(&kind);
        match kind {
            TimerKind::WindowExpiry => self.on_window_expiry(step),
            TimerKind::HandTimeout => {
                if self.hand.take().is_some() {
                    step.out.push(EngineAction::LowerHand);
                }
            }
            TimerKind::LullCheck => match evaluate_lull(self, step.now, step.config) {
                LullDecision::ProposeProactive => {
                    let request_id = self.new_request(Pending::ProactiveCandidate);
                    step.out.push(EngineAction::RequestCandidate { request_id });
                }
                LullDecision::RetryAfter(wait) => self.start_timer(step, TimerKind::LullCheck, wait),
                LullDecision::NoAction => {}
            },
            TimerKind::SuggestionTick => {
                self.start_timer(step, TimerKind::SuggestionTick, step.config.suggestion_period_ms);
                if context::suggestion_tick(self.hand.is_some(), &self.policy.capabilities) {
                    let request_id = self.new_request(Pending::Suggestion);
                    step.out.push(EngineAction::RequestSuggestion { request_id });
                }
            }
            // Forced raises are evaluated at user pauses; nothing arms this.
            TimerKind::ForcedRaise => {}
        }
    }

    fn on_window_expiry(&mut self, step: &mut Step<'_>) {
        let Some(window) = self.window.as_mut() else { return };
        let waiting = window.candidate.is_some() && window.speech_started_at.is_none() && !window.muted;
        if waiting && window.reason.is_extendable() && !window.extended_once {
            window.extended_once = true;
            let budget = window.budget_ms;
            step.out.push(EngineAction::ExtendWindow);
            self.start_timer(step, TimerKind::WindowExpiry, budget);
        } else {
            self.close_window(step);
        }
    }

    fn on_mode_command(&mut self, step: &mut Step<'_>, cmd: &ModeCommand) {
        match command_effect(&self.policy, cmd.cmd) {
            Ok(CommandEffect::Relocate(policy)) => self.replace_policy(step, policy),
            Ok(_) => {}
            Err(e) => step.out.push(EngineAction::Log { entry: EngineNote::CommandIgnored { detail: e.to_string() } }),
        }
    }

    fn replace_policy(&mut self, step: &mut Step<'_>, policy: ModePolicy) {
        let caps = policy.capabilities;
        let to_outer = policy.agent_location == AgentLocation::OuterCircle;
        self.policy = policy;
        step.out.push(EngineAction::Log { entry: EngineNote::PolicyUpdated { policy: self.policy.clone() } });
        if !caps.can_speak() {
            if self.window.as_ref().is_some_and(|w| w.speech_started_at.is_some() && !w.muted) {
                step.out.push(EngineAction::MuteAgent);
                if let Some(w) = self.window.as_mut() {
                    w.muted = true;
                }
                self.last_agent_speech_end_at = Some(step.now);
            }
            self.close_window(step);
            self.cancel_timer(step, TimerKind::LullCheck);
        }
        if !caps.proactive_speech {
            let proactive: Vec<RequestId> = self
                .outstanding
                .iter()
                .filter(|(_, p)| **p == Pending::ProactiveCandidate)
                .map(|(id, _)| id.clone())
                .collect();
            for request_id in proactive {
                self.outstanding.remove(&request_id);
                step.out.push(EngineAction::AbortGeneration { request_id });
            }
        }
        if to_outer || !caps.hand_raise {
            self.lower_hand(step);
        }
        if caps.any() {
            self.arm_suggestions(step);
        } else {
            self.cancel_timer(step, TimerKind::SuggestionTick);
        }
    }

    fn on_request_failed(&mut self, step: &mut Step<'_>, request_id: &RequestId, failure: FailureKind) {
        let Some(pending) = self.outstanding.remove(request_id) else {
            return self.unknown_request(step, request_id);
        };
        step.out.push(EngineAction::Log {
            entry: EngineNote::RequestFailed { request_id: request_id.clone(), kind: pending.kind(), failure },
        });
        match pending {
            Pending::WindowCandidate => {
                let matches = self.window.as_ref().is_some_and(|w| w.candidate.as_ref() == Some(request_id));
                if matches {
                    if let Some(w) = self.window.as_mut() {
                        w.candidate = None;
                    }
                    self.close_window(step);
                }
            }
            Pending::ForcedHandCandidate => {
                if let Some(hand) = self.hand.as_mut() {
                    if hand.awaiting.as_ref() == Some(request_id) {
                        hand.awaiting = None;
                    }
                }
            }
            // A failed follow-up check counts as "not a follow-up".
            Pending::FollowUp if self.window.is_none() => self.pause(step),
            _ => {}
        }
    }

    fn check_invariants(&self, config: &ProtocolConfig) -> Result<(), EngineError> {
        if let Some(w) = &self.window {
            if w.extended_once && !w.reason.is_extendable() {
                return Err(EngineError::InvariantBreach(format!("{:?} window was extended", w.reason)));
            }
            if let Some(id) = &w.candidate {
                if !self.outstanding.contains_key(id) {
                    return Err(EngineError::InvariantBreach(format!("window waits on unknown request {id}")));
                }
            }
            if self.hand.is_some() {
                return Err(EngineError::InvariantBreach("hand raised while a window is open".into()));
            }
        }
        if self.consecutive_proactive > config.max_consecutive_proactive {
            return Err(EngineError::InvariantBreach(format!(
                "{} consecutive proactive turns",
                self.consecutive_proactive
            )));
        }
        Ok(())
    }
}
