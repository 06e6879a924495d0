//! Protocol invariants, checked over a trace by an observer that shares no
//! code with the engine beyond the data types.

use std::collections::{BTreeMap, BTreeSet};

use huddle_core::modes::{AgentLocation, ModePolicy};
use huddle_core::room::{LogBody, RoomHeader};
use huddle_core::text::mentions_name;
use huddle_core::{
    EngineAction, EngineEvent, EngineNote, Millis, ParticipantId, ProtocolConfig, RoomKind, TimerId, TimerKind,
    WindowReason,
};
use serde::{Deserialize, Serialize};

use crate::run::TraceEntry;

pub const SINGLE_WINDOW: &str = "single-window";
pub const GATED_SPEECH: &str = "gated-speech";
pub const NO_TALK_OVER: &str = "no-talk-over";
pub const BARGE_IN: &str = "barge-in";
pub const WINDOW_BUDGET: &str = "window-budget";
pub const HAND_LIFECYCLE: &str = "hand-lifecycle";
pub const FORCED_RAISE: &str = "forced-raise";
pub const PROACTIVE_RATE: &str = "proactive-rate";
pub const PROACTIVE_LULL: &str = "proactive-lull";
pub const CAPABILITY: &str = "capability-soundness";
pub const PING_FIDELITY: &str = "ping-fidelity";
pub const OUTER_CIRCLE: &str = "outer-circle-silence";
pub const BREAKOUT_ISOLATION: &str = "breakout-isolation";
pub const TIMER_UNIQUE: &str = "timer-unique";
pub const SUGGESTION_SPACING: &str = "suggestion-spacing";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub invariant: String,
    pub t: Millis,
    pub room: String,
    pub detail: String,
}

impl Violation {
    pub fn new(invariant: &str, t: Millis, room: &str, detail: impl Into<String>) -> Self {
        Self { invariant: invariant.into(), t, room: room.into(), detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
struct Win {
    reason: WindowReason,
    opens_at: Millis,
    budget: Millis,
    extended: u32,
    muted: bool,
    overdue_reported: bool,
}

impl Win {
    fn deadline(&self) -> Millis {
        self.opens_at + self.budget * (1 + self.extended as Millis)
    }
}

#[derive(Debug, Clone, Default)]
struct StepCtx {
    /// First action of this step must be MuteAgent.
    expect_mute: bool,
    saw_action: bool,
    /// A pause that must force a hand raise.
    forced_due: Option<Millis>,
    raised: bool,
    relevance_first: bool,
}

#[derive(Debug)]
struct RoomCheck {
    room: String,
    kind: RoomKind,
    config: ProtocolConfig,
    policy: Option<ModePolicy>,
    agent_name: String,
    started_at: Millis,
    window: Option<Win>,
    hand: Option<(Millis, bool)>,
    agent_speaking: bool,
    last_agent_end: Option<Millis>,
    last_user_end: Option<Millis>,
    users_speaking: BTreeSet<ParticipantId>,
    consecutive_proactive: u32,
    timers: BTreeMap<TimerKind, TimerId>,
    last_suggestion: Option<Millis>,
    step: StepCtx,
    out: Vec<Violation>,
}

impl RoomCheck {
    fn new(room: &str, header: &RoomHeader, config: ProtocolConfig) -> Self {
        Self {
            room: room.into(),
            kind: header.room.kind.clone(),
            config,
            policy: header.policy.clone(),
            agent_name: header.persona.name.clone(),
            started_at: header.started_at,
            window: None,
            hand: None,
            agent_speaking: false,
            last_agent_end: None,
            last_user_end: None,
            users_speaking: BTreeSet::new(),
            consecutive_proactive: 0,
            timers: BTreeMap::new(),
            last_suggestion: None,
            step: StepCtx::default(),
            out: Vec::new(),
        }
    }

    fn flag(&mut self, invariant: &str, t: Millis, detail: impl Into<String>) {
        self.out.push(Violation::new(invariant, t, &self.room, detail));
    }

    fn caps(&self) -> huddle_core::modes::Capabilities {
        self.policy.as_ref().map(|p| p.capabilities).unwrap_or(huddle_core::modes::Capabilities {
            proactive_speech: false,
            reactive_speech: false,
            hand_raise: false,
            hand_raise_ping: false,
        })
    }

    fn location(&self) -> AgentLocation {
        self.policy.as_ref().map(|p| p.agent_location.clone()).unwrap_or(AgentLocation::Absent)
    }

    /// Deadlines that passed without the closing action.
    fn check_clock(&mut self, t: Millis) {
        if let Some(w) = self.window.as_mut() {
            if t > w.deadline() && !w.overdue_reported {
                w.overdue_reported = true;
                let detail = format!("window opened at {} still open past {}", w.opens_at, w.deadline());
                self.flag(WINDOW_BUDGET, t, detail);
            }
        }
        if let Some((raised, reported)) = self.hand {
            if t > raised + self.config.hand_timeout_ms && !reported {
                self.hand = Some((raised, true));
                self.flag(HAND_LIFECYCLE, t, format!("hand raised at {raised} neither lowered nor accepted in time"));
            }
        }
    }

    fn end_step(&mut self, t: Millis) {
        let step = std::mem::take(&mut self.step);
        if step.expect_mute && !step.saw_action {
            self.flag(BARGE_IN, t, "user barged in but the agent was not muted");
        }
        if let Some(at) = step.forced_due {
            if !step.raised || step.relevance_first {
                self.flag(FORCED_RAISE, at, "pause after a long agent silence did not force a hand raise");
            }
        }
    }

    fn event(&mut self, t: Millis, event: &EngineEvent) {
        self.end_step(t);
        self.check_clock(t);
        match event {
            EngineEvent::UserSpeechStart { speaker, .. } => {
                if self.window.is_some() {
                    self.step.expect_mute = true;
                }
                self.users_speaking.insert(speaker.clone());
            }
            EngineEvent::UserSpeechEnd { turn } => {
                self.users_speaking.remove(&turn.speaker);
                self.last_user_end = Some(t);
                if turn.room.id != self.room {
                    self.flag(BREAKOUT_ISOLATION, t, format!("turn for room {} logged in {}", turn.room.id, self.room));
                }
                if let RoomKind::Breakout { owner } = &self.kind {
                    if turn.speaker != *owner {
                        let detail = format!("{} spoke in the breakout of {}", turn.speaker.id, owner.id);
                        self.flag(BREAKOUT_ISOLATION, t, detail);
                    }
                }
                if !turn.text.trim().is_empty() {
                    self.consecutive_proactive = 0;
                }
                let caps = self.caps();
                let invoked = caps.reactive_speech && mentions_name(&turn.text, &self.agent_name);
                let silent_for = t - self.last_agent_end.unwrap_or(self.started_at);
                if self.window.is_none()
                    && self.hand.is_none()
                    && caps.hand_raise
                    && !invoked
                    && silent_for > self.config.forced_raise_after_ms
                {
                    self.step.forced_due = Some(t);
                }
            }
            EngineEvent::RoomChange { participant, from, .. } => {
                if from.as_ref().is_some_and(|r| r.id == self.room) {
                    self.users_speaking.remove(participant);
                }
            }
            EngineEvent::TimerFired { timer_id, kind }
                if self.timers.get(kind) == Some(timer_id) => {
                    self.timers.remove(kind);
                }
            _ => {}
        }
    }

    fn action(&mut self, t: Millis, action: &EngineAction) {
        if self.step.expect_mute && !self.step.saw_action && !matches!(action, EngineAction::MuteAgent) {
            self.flag(BARGE_IN, t, format!("first action after barge-in was {action:?}"));
        }
        self.step.saw_action = true;
        let caps = self.caps();
        match action {
            EngineAction::OpenWindow { reason, budget_ms } => {
                if self.window.is_some() {
                    self.flag(SINGLE_WINDOW, t, "window opened while another is open");
                }
                if *budget_ms != self.config.window_budget_ms {
                    self.flag(WINDOW_BUDGET, t, format!("budget {budget_ms} differs from configuration"));
                }
                let allowed = match reason {
                    WindowReason::ProactiveLull => caps.proactive_speech,
                    _ => caps.reactive_speech,
                };
                if !allowed {
                    self.flag(CAPABILITY, t, format!("{reason:?} window under {:?}", self.policy));
                }
                if self.location() == AgentLocation::OuterCircle {
                    self.flag(OUTER_CIRCLE, t, "window opened for an agent in the outer circle");
                }
                if *reason == WindowReason::ProactiveLull {
                    self.check_lull(t);
                }
                if *reason == WindowReason::HandRaiseAccepted
                    && self.hand.take().is_none() {
                        self.flag(HAND_LIFECYCLE, t, "hand accepted but none was raised");
                    }
                self.window = Some(Win {
                    reason: *reason,
                    opens_at: t,
                    budget: *budget_ms,
                    extended: 0,
                    muted: false,
                    overdue_reported: false,
                });
            }
            EngineAction::ExtendWindow => match self.window.as_mut() {
                Some(w) if w.extended == 0 && matches!(w.reason, WindowReason::DirectInvocation | WindowReason::FollowUp) => {
                    w.extended = 1;
                }
                Some(w) => {
                    let detail = format!("extension of a {:?} window (extended {} times)", w.reason, w.extended);
                    self.flag(WINDOW_BUDGET, t, detail);
                }
                None => self.flag(SINGLE_WINDOW, t, "extension without an open window"),
            },
            EngineAction::CloseWindow => match self.window.take() {
                Some(w) => {
                    if t > w.deadline() && !w.overdue_reported {
                        self.flag(WINDOW_BUDGET, t, format!("closed at {t}, deadline {}", w.deadline()));
                    }
                    if self.agent_speaking {
                        self.agent_speaking = false;
                        self.last_agent_end = Some(t);
                    }
                }
                None => self.flag(SINGLE_WINDOW, t, "close without an open window"),
            },
            EngineAction::MuteAgent => match self.window.as_mut() {
                Some(w) => {
                    w.muted = true;
                    if self.agent_speaking {
                        self.agent_speaking = false;
                        self.last_agent_end = Some(t);
                    }
                }
                None => self.flag(GATED_SPEECH, t, "mute without an open window"),
            },
            EngineAction::EmitAgentSpeech { .. } => {
                match &self.window {
                    None => self.flag(GATED_SPEECH, t, "speech outside a window"),
                    Some(w) if w.muted => self.flag(GATED_SPEECH, t, "speech into a muted window"),
                    Some(_) => {}
                }
                if !self.users_speaking.is_empty() {
                    self.flag(NO_TALK_OVER, t, format!("agent spoke over {:?}", self.users_speaking));
                }
                if !caps.can_speak() {
                    self.flag(CAPABILITY, t, "speech without a speaking capability");
                }
                if self.location() == AgentLocation::OuterCircle {
                    self.flag(OUTER_CIRCLE, t, "agent in the outer circle spoke");
                }
                let proactive = self.window.as_ref().is_some_and(|w| w.reason == WindowReason::ProactiveLull);
                if proactive {
                    self.consecutive_proactive += 1;
                    if self.consecutive_proactive > self.config.max_consecutive_proactive {
                        let detail = format!("{} consecutive proactive turns", self.consecutive_proactive);
                        self.flag(PROACTIVE_RATE, t, detail);
                    }
                } else {
                    self.consecutive_proactive = 0;
                }
                self.agent_speaking = true;
            }
            EngineAction::RaiseHand { ping } => {
                if self.hand.is_some() {
                    self.flag(HAND_LIFECYCLE, t, "hand raised twice");
                }
                if !caps.hand_raise {
                    self.flag(CAPABILITY, t, "hand raised without the capability");
                }
                if *ping != caps.hand_raise_ping {
                    self.flag(PING_FIDELITY, t, format!("ping={ping} under handRaisePing={}", caps.hand_raise_ping));
                }
                self.hand = Some((t, false));
                if self.step.forced_due.is_some() {
                    self.step.raised = true;
                }
            }
            EngineAction::LowerHand => match self.hand.take() {
                Some((raised, reported)) => {
                    if t > raised + self.config.hand_timeout_ms && !reported {
                        self.flag(HAND_LIFECYCLE, t, format!("hand raised at {raised} lowered at {t}"));
                    }
                }
                None => self.flag(HAND_LIFECYCLE, t, "lowered a hand that was not raised"),
            },
            EngineAction::RequestRelevance { .. } => {
                if self.step.forced_due.is_some() && !self.step.raised {
                    self.step.relevance_first = true;
                }
                self.check_absent_agent(t, "relevance request");
            }
            EngineAction::RequestCandidate { .. } => self.check_absent_agent(t, "candidate request"),
            EngineAction::RequestFollowUpCheck { .. } => self.check_absent_agent(t, "follow-up check"),
            EngineAction::RequestSuggestion { .. } => {
                self.check_absent_agent(t, "suggestion request");
                if let Some(last) = self.last_suggestion {
                    if t - last < self.config.suggestion_period_ms {
                        self.flag(SUGGESTION_SPACING, t, format!("suggestion requested {} ms after the last", t - last));
                    }
                }
                if self.hand.is_some() {
                    self.flag(SUGGESTION_SPACING, t, "suggestion requested while the hand is raised");
                }
                self.last_suggestion = Some(t);
            }
            EngineAction::StartTimer { timer_id, kind, .. } => {
                if let Some(live) = self.timers.insert(*kind, *timer_id) {
                    self.flag(TIMER_UNIQUE, t, format!("{kind:?} timer {} started while {} is live", timer_id.0, live.0));
                }
            }
            EngineAction::CancelTimer { timer_id, kind } => {
                if self.timers.get(kind) == Some(timer_id) {
                    self.timers.remove(kind);
                }
            }
            EngineAction::Log { entry: EngineNote::PolicyUpdated { policy } } => {
                self.policy = Some(policy.clone());
            }
            _ => {}
        }
    }

    fn check_absent_agent(&mut self, t: Millis, what: &str) {
        if self.location() == AgentLocation::Absent {
            self.flag(BREAKOUT_ISOLATION, t, format!("{what} for an agent absent from this room"));
        }
    }

    fn check_lull(&mut self, t: Millis) {
        if !self.users_speaking.is_empty() {
            self.flag(PROACTIVE_LULL, t, "proactive window while a user is speaking");
        }
        let silence_since = match (self.last_user_end, self.last_agent_end) {
            (Some(u), Some(a)) => u.max(a),
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => self.started_at,
        };
        if t - silence_since < self.config.lull_threshold_ms {
            self.flag(PROACTIVE_LULL, t, format!("proactive window after only {} ms of silence", t - silence_since));
        }
        if let Some(end) = self.last_agent_end {
            if t - end < self.config.min_proactive_gap_ms {
                self.flag(PROACTIVE_LULL, t, format!("proactive window {} ms after the agent last spoke", t - end));
            }
        }
    }

    fn finish(&mut self, horizon: Millis) -> Vec<Violation> {
        self.end_step(horizon);
        self.check_clock(horizon);
        std::mem::take(&mut self.out)
    }
}

/// Checks every invariant over `entries`. Each room is checked against the
/// configuration in its header unless `config` overrides it. Deadlines
/// still pending at `horizon` count as missed.
pub fn check_invariants(entries: &[TraceEntry], horizon: Millis, config: Option<&ProtocolConfig>) -> Vec<Violation> {
    let mut rooms: BTreeMap<String, RoomCheck> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for e in entries {
        match &e.body {
            LogBody::Header(header) => {
                let cfg = config.cloned().unwrap_or_else(|| header.config.clone());
                if rooms.insert(e.room.clone(), RoomCheck::new(&e.room, header, cfg)).is_none() {
                    order.push(e.room.clone());
                }
            }
            LogBody::Event(event) => match rooms.get_mut(&e.room) {
                Some(r) => r.event(e.t, event),
                None => out.push(Violation::new("trace-shape", e.t, &e.room, "event before the room header")),
            },
            LogBody::Action(action) => match rooms.get_mut(&e.room) {
                Some(r) => r.action(e.t, action),
                None => out.push(Violation::new("trace-shape", e.t, &e.room, "action before the room header")),
            },
        }
    }
    for id in order {
        if let Some(r) = rooms.get_mut(&id) {
            out.extend(r.finish(horizon));
        }
    }
    out.sort_by(|a, b| (a.t, &a.room, &a.invariant).cmp(&(b.t, &b.room, &b.invariant)));
    out
}
