//! The language-generation boundary.
//!
//! Everything that needs language understanding goes through
//! [`AgentBackend`]. The engine never calls it directly: the room loop
//! turns `Request*` actions into [`BackendRequest`]s, some driver runs them,
//! and [`answer`] folds the outcome back into an [`EngineEvent`].

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::context::ActiveContext;
use crate::model::{EngineEvent, FailureKind, Millis, RequestId, RequestKind, Turn};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Persona {
    pub name: String,
    pub system_prompt: String,
    #[serde(default)]
    pub assigned_preference: String,
    #[serde(default)]
    pub task_description: String,
}

/// Meta-prompt shared by every persona; only the task and the assigned
/// preference change between discussions.
pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a member of a small team holding a live spoken discussion. \
Speak in one or two short sentences, the way a colleague would in a meeting. \
Build on what the others just said, argue for your assigned position, and never \
narrate your own behaviour or mention that you are software.";

impl Default for Persona {
    fn default() -> Self {
        Self {
            name: "Lisa".into(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            assigned_preference: String::new(),
            task_description: String::new(),
        }
    }
}

const TASK_FIXTURES: [&str; 3] = [
    include_str!("../fixtures/personas/task1_signature_pizzas.json"),
    include_str!("../fixtures/personas/task2_global_citizenship.json"),
    include_str!("../fixtures/personas/task3_mars_school.json"),
];

impl Persona {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.name.trim().is_empty() {
            return Err(BackendError::InvalidPersona("name is empty".into()));
        }
        if self.system_prompt.trim().is_empty() {
            return Err(BackendError::InvalidPersona("systemPrompt is empty".into()));
        }
        Ok(())
    }

    /// One of the three bundled discussion tasks (1-based).
    pub fn task(n: usize) -> Option<Persona> {
        let raw = TASK_FIXTURES.get(n.checked_sub(1)?)?;
        Some(serde_json::from_str(raw).expect("bundled persona fixture is valid JSON"))
    }

    pub fn load(path: &Path) -> Result<Persona, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let persona: Persona =
            serde_json::from_str(&raw).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        persona.validate()?;
        Ok(persona)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend error: {0}")]
    Failed(String),
    #[error("invalid persona: {0}")]
    InvalidPersona(String),
    #[error("invalid script: {0}")]
    Script(String),
}

impl BackendError {
    pub fn failure_kind(&self) -> FailureKind {
        match self {
            BackendError::Timeout => FailureKind::Timeout,
            _ => FailureKind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum RequestPayload {
    Candidate { context: ActiveContext, persona: Persona },
    Relevance { candidate: String, recent_turns: Vec<Turn> },
    FollowUp { utterance: String, last_agent_utterance: String },
    Summary { batch: Vec<Turn>, prior_summary: String, persona: Persona },
    Suggestion { context: ActiveContext, persona: Persona },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendRequest {
    pub request_id: RequestId,
    pub payload: RequestPayload,
}

impl BackendRequest {
    pub fn kind(&self) -> RequestKind {
        match self.payload {
            RequestPayload::Candidate { .. } => RequestKind::Candidate,
            RequestPayload::Relevance { .. } => RequestKind::Relevance,
            RequestPayload::FollowUp { .. } => RequestKind::FollowUp,
            RequestPayload::Summary { .. } => RequestKind::Summary,
            RequestPayload::Suggestion { .. } => RequestKind::Suggestion,
        }
    }
}

pub trait AgentBackend: Send + Sync {
    fn generate_candidate(&self, context: &ActiveContext, persona: &Persona) -> Result<String, BackendError>;
    fn judge_relevance(&self, candidate: &str, recent_turns: &[Turn]) -> Result<bool, BackendError>;
    fn classify_follow_up(&self, utterance: &str, last_agent_utterance: &str) -> Result<bool, BackendError>;
    fn summarize(&self, batch: &[Turn], prior_summary: &str, persona: &Persona) -> Result<String, BackendError>;
    fn suggest(&self, context: &ActiveContext, persona: &Persona) -> Result<String, BackendError>;

    /// How long a simulated response to `kind` takes. Live backends take
    /// however long they take and report 0.
    fn latency_ms(&self, _kind: RequestKind) -> Millis {
        0
    }
}

/// Runs `request` against `backend` and wraps the outcome as the event the
/// room loop expects.
pub fn answer(backend: &dyn AgentBackend, request: &BackendRequest) -> EngineEvent {
    let request_id = request.request_id.clone();
    let failed = |e: BackendError| EngineEvent::RequestFailed { request_id: request_id.clone(), failure: e.failure_kind() };
    match &request.payload {
        RequestPayload::Candidate { context, persona } => match backend.generate_candidate(context, persona) {
            Ok(text) => EngineEvent::AgentCandidateReady { request_id: request_id.clone(), text },
            Err(e) => failed(e),
        },
        RequestPayload::Relevance { candidate, recent_turns } => match backend.judge_relevance(candidate, recent_turns) {
            Ok(relevant) => EngineEvent::RelevanceVerdict { request_id: request_id.clone(), relevant },
            Err(e) => failed(e),
        },
        RequestPayload::FollowUp { utterance, last_agent_utterance } => {
            match backend.classify_follow_up(utterance, last_agent_utterance) {
                Ok(is_follow_up) => EngineEvent::FollowUpVerdict { request_id: request_id.clone(), is_follow_up },
                Err(e) => failed(e),
            }
        }
        RequestPayload::Summary { batch, prior_summary, persona } => match backend.summarize(batch, prior_summary, persona) {
            Ok(text) => EngineEvent::SummaryReady { request_id: request_id.clone(), text },
            Err(e) => failed(e),
        },
        RequestPayload::Suggestion { context, persona } => match backend.suggest(context, persona) {
            Ok(text) => EngineEvent::SuggestionReady { request_id: request_id.clone(), text },
            Err(e) => failed(e),
        },
    }
}

const FOLLOW_UP_CUES: &[&str] = &[
    "are", "can", "could", "did", "do", "does", "how", "is", "which", "who", "why", "will", "would", "what", "where",
    "when", "you", "your", "yours",
];

/// Words from `FOLLOW_UP_CUES` that open `utterance`.
fn starts_with_cue(utterance: &str) -> bool {
    text::tokens(utterance).first().is_some_and(|w| FOLLOW_UP_CUES.contains(&w.as_str()))
}

/// Scripted relevance rule: the candidate shares at least one content word
/// with the recent turns.
pub fn overlap_relevance(candidate: &str, recent_turns: &[Turn]) -> bool {
    let words = text::content_words(candidate);
    recent_turns.iter().any(|t| !text::content_words(&t.text).is_disjoint(&words))
}

/// Scripted follow-up rule: a second-person or interrogative opener, or at
/// least two content words shared with the agent's last utterance.
pub fn cue_follow_up(utterance: &str, last_agent_utterance: &str) -> bool {
    if utterance.trim().is_empty() {
        return false;
    }
    if starts_with_cue(utterance) {
        return true;
    }
    let said = text::content_words(last_agent_utterance);
    text::content_words(utterance).intersection(&said).count() >= 2
}

/// Scripted summary: the prior summary followed by `speaker:first words`
/// for each turn of the batch, `; `-separated.
pub fn digest_summary(batch: &[Turn], prior_summary: &str, tag_seq: bool) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(batch.len() + 1);
    if !prior_summary.is_empty() {
        parts.push(prior_summary.to_string());
    }
    for t in batch {
        let words = text::first_words(&t.text, 4);
        if tag_seq {
            parts.push(format!("#{} {}:{}", t.seq, t.speaker.id, words));
        } else {
            parts.push(format!("{}:{}", t.speaker.id, words));
        }
    }
    parts.join("; ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TextScript {
    /// Replies served first, in order; `null` simulates a timeout.
    pub queue: Vec<Option<String>>,
    /// Served once the queue is empty. Without it an empty candidate queue
    /// times out and an empty suggestion queue serves the persona preference.
    pub fallback: Option<String>,
    pub latency_ms: Millis,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct VerdictScript {
    /// Verdicts served first; `null` simulates a timeout. The word-overlap
    /// rule decides once the queue is empty.
    pub queue: Vec<Option<bool>>,
    pub latency_ms: Millis,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SummaryScript {
    pub queue: Vec<Option<String>>,
    pub latency_ms: Millis,
    /// Prefix each digest entry with `#seq`.
    pub tag_seq: bool,
}

/// Script file for [`ScriptedBackend`]: a FIFO per request kind plus rule
/// parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct BackendScript {
    pub candidate: TextScript,
    pub relevance: VerdictScript,
    pub follow_up: VerdictScript,
    pub summary: SummaryScript,
    pub suggestion: TextScript,
}

impl BackendScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Default)]
struct Queues {
    candidate: VecDeque<Option<String>>,
    relevance: VecDeque<Option<bool>>,
    follow_up: VecDeque<Option<bool>>,
    summary: VecDeque<Option<String>>,
    suggestion: VecDeque<Option<String>>,
}

/// Deterministic backend driven by a [`BackendScript`].
#[derive(Debug)]
pub struct ScriptedBackend {
    script: BackendScript,
    queues: Mutex<Queues>,
}

impl ScriptedBackend {
    pub fn new(script: BackendScript) -> Self {
        let queues = Queues {
            candidate: script.candidate.queue.iter().cloned().collect(),
            relevance: script.relevance.queue.iter().cloned().collect(),
            follow_up: script.follow_up.queue.iter().cloned().collect(),
            summary: script.summary.queue.iter().cloned().collect(),
            suggestion: script.suggestion.queue.iter().cloned().collect(),
        };
        Self { script, queues: Mutex::new(queues) }
    }

    fn queues(&self) -> std::sync::MutexGuard<'_, Queues> {
        self.queues.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

fn served<T>(entry: Option<Option<T>>) -> Option<Result<T, BackendError>> {
    entry.map(|e| e.ok_or(BackendError::Timeout))
}

impl AgentBackend for ScriptedBackend {
    fn generate_candidate(&self, context: &ActiveContext, _persona: &Persona) -> Result<String, BackendError> {
        let base = match served(self.queues().candidate.pop_front()) {
            Some(r) => r?,
            None => self.script.candidate.fallback.clone().ok_or(BackendError::Timeout)?,
        };
        Ok(match &context.current_suggestion {
            Some(s) if !s.is_empty() && !base.contains(s.as_str()) => format!("{base} {s}"),
            _ => base,
        })
    }

    fn judge_relevance(&self, candidate: &str, recent_turns: &[Turn]) -> Result<bool, BackendError> {
        match served(self.queues().relevance.pop_front()) {
            Some(r) => r,
            None => Ok(overlap_relevance(candidate, recent_turns)),
        }
    }

    fn classify_follow_up(&self, utterance: &str, last_agent_utterance: &str) -> Result<bool, BackendError> {
        match served(self.queues().follow_up.pop_front()) {
            Some(r) => r,
            None => Ok(cue_follow_up(utterance, last_agent_utterance)),
        }
    }

    fn summarize(&self, batch: &[Turn], prior_summary: &str, _persona: &Persona) -> Result<String, BackendError> {
        match served(self.queues().summary.pop_front()) {
            Some(r) => r,
            None => Ok(digest_summary(batch, prior_summary, self.script.summary.tag_seq)),
        }
    }

    fn suggest(&self, _context: &ActiveContext, persona: &Persona) -> Result<String, BackendError> {
        match served(self.queues().suggestion.pop_front()) {
            Some(r) => r,
            None => Ok(self.script.suggestion.fallback.clone().unwrap_or_else(|| persona.assigned_preference.clone())),
        }
    }

    fn latency_ms(&self, kind: RequestKind) -> Millis {
        match kind {
            RequestKind::Candidate => self.script.candidate.latency_ms,
            RequestKind::Relevance => self.script.relevance.latency_ms,
            RequestKind::FollowUp => self.script.follow_up.latency_ms,
            RequestKind::Summary => self.script.summary.latency_ms,
            RequestKind::Suggestion => self.script.suggestion.latency_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParticipantId, RoomId, TurnOrigin};

    fn t(seq: u64, speaker: ParticipantId, text: &str) -> Turn {
        let origin = if speaker.is_agent() { TurnOrigin::Reactive } else { TurnOrigin::HumanSpeech };
        Turn { seq, speaker, room: RoomId::main("main"), text: text.into(), started_at: 0, ended_at: 1, origin }
    }

    fn backend(script: BackendScript) -> ScriptedBackend {
        ScriptedBackend::new(script)
    }

    #[test]
    fn candidate_pops_queue_then_times_out() {
        let b = backend(BackendScript {
            candidate: TextScript { queue: vec![Some("idea-1".into())], ..Default::default() },
            ..Default::default()
        });
        let ctx = ActiveContext::default();
        assert_eq!(b.generate_candidate(&ctx, &Persona::default()).unwrap(), "idea-1");
        assert_eq!(b.generate_candidate(&ctx, &Persona::default()), Err(BackendError::Timeout));
    }

    #[test]
    fn candidate_carries_current_suggestion() {
        let persona = Persona::task(3).unwrap();
        let b = backend(BackendScript {
            candidate: TextScript { fallback: Some("Here is a thought.".into()), ..Default::default() },
            ..Default::default()
        });
        let suggestion = b.suggest(&ActiveContext::default(), &persona).unwrap();
        assert_eq!(suggestion, persona.assigned_preference);
        let ctx = ActiveContext { current_suggestion: Some(suggestion.clone()), ..Default::default() };
        assert!(b.generate_candidate(&ctx, &persona).unwrap().contains(&suggestion));
    }

    #[test]
    fn relevance_by_word_overlap() {
        let d1 = ParticipantId::human("D1");
        let turns = vec![t(1, d1.clone(), "I want pizza with pineapple")];
        assert!(overlap_relevance("pizza toppings matter", &turns));
        assert!(!overlap_relevance("pizza toppings matter", &[]));
        assert!(!overlap_relevance("gym equipment", &turns));
    }

    #[test]
    fn follow_up_rules() {
        assert!(cue_follow_up("what do you mean by that", "anything"));
        assert!(!cue_follow_up("", "anything"));
        assert!(!cue_follow_up("anyway, about the gym", "a purple beet pizza would be memorable"));
        assert!(cue_follow_up("a purple pizza, memorable indeed", "a purple beet pizza would be memorable"));
    }

    #[test]
    fn digest_format() {
        let batch = vec![t(1, ParticipantId::human("D1"), "hello"), t(2, ParticipantId::agent("A"), "hi")];
        assert_eq!(digest_summary(&batch, "", false), "D1:hello; A:hi");
        let next = digest_summary(&batch, "D1:hello; A:hi", false);
        assert!(next.starts_with("D1:hello; A:hi; "));
        assert_eq!(digest_summary(&batch[..1], "", true), "#1 D1:hello");
    }

    #[test]
    fn queued_null_is_a_timeout() {
        let b = backend(BackendScript {
            relevance: VerdictScript { queue: vec![None, Some(true)], latency_ms: 10 },
            ..Default::default()
        });
        assert_eq!(b.judge_relevance("x", &[]), Err(BackendError::Timeout));
        assert_eq!(b.judge_relevance("x", &[]), Ok(true));
        assert_eq!(b.latency_ms(RequestKind::Relevance), 10);
    }

    #[test]
    fn answer_maps_failures_to_events() {
        let b = backend(BackendScript::default());
        let req = BackendRequest {
            request_id: RequestId("r/e1".into()),
            payload: RequestPayload::Candidate { context: ActiveContext::default(), persona: Persona::default() },
        };
        assert_eq!(
            answer(&b, &req),
            EngineEvent::RequestFailed { request_id: RequestId("r/e1".into()), failure: FailureKind::Timeout }
        );
    }

    #[test]
    fn bundled_personas_share_system_prompt() {
        let personas: Vec<Persona> = (1..=3).map(|n| Persona::task(n).unwrap()).collect();
        for p in &personas {
            p.validate().unwrap();
            assert_eq!(p.system_prompt, personas[0].system_prompt);
            assert_eq!(p.name, "Lisa");
        }
        assert!(personas[2].assigned_preference.contains("cultural and creative spaces"));
        assert!(Persona::task(4).is_none());
        assert!(Persona::task(0).is_none());
    }
}
