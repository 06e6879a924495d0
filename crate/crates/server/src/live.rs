//! Chat-completion HTTP backend.
//!
//! Every request kind becomes one `POST {baseUrl}/chat/completions` call
//! with a system and a user message; the reply's first choice is the
//! answer. Verdicts are read from a leading yes or no.

use std::time::Duration;

use huddle_core::backend::{AgentBackend, BackendError, Persona};
use huddle_core::context::ActiveContext;
use huddle_core::Turn;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LiveConfig {
    /// Root of an OpenAI-style API, e.g. `https://api.example.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. Omit it for services
    /// that need no key.
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    10_000
}

#[derive(Debug)]
pub struct LiveBackend {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl LiveBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: LiveConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env_var {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::Failed(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: LiveConfig, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(config.timeout_ms)).build();
        Self { config, api_key, agent }
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut request = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = request.send_string(&body.to_string()).map_err(classify)?;
        let raw = response.into_string().map_err(|e| io_failure(&e))?;
        let reply: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| BackendError::Failed(format!("reply is not JSON: {e}")))?;
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Failed("reply has no choices[0].message.content".into()))?
            .trim()
            .to_string();
        if text.is_empty() {
            return Err(BackendError::Failed("empty reply".into()));
        }
        Ok(text)
    }

    fn verdict(&self, system: &str, user: &str) -> Result<bool, BackendError> {
        let reply = self.chat(system, user)?;
        parse_verdict(&reply).ok_or_else(|| BackendError::Failed(format!("expected yes or no, got {reply:?}")))
    }
}

fn io_failure(e: &std::io::Error) -> BackendError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => BackendError::Timeout,
        _ => BackendError::Failed(e.to_string()),
    }
}

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Status(code, response) => {
            let detail = response.into_string().unwrap_or_default();
            BackendError::Failed(format!("HTTP {code}: {}", detail.chars().take(200).collect::<String>()))
        }
        ureq::Error::Transport(t) => {
            let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(&t);
            while let Some(s) = source {
                if let Some(io) = s.downcast_ref::<std::io::Error>() {
                    return io_failure(io);
                }
                source = s.source();
            }
            BackendError::Failed(t.to_string())
        }
    }
}

/// Reads a leading yes or no, ignoring case and punctuation.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    let first: String = reply.trim().chars().take_while(|c| c.is_alphabetic()).collect::<String>().to_lowercase();
    match first.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn render_turns(turns: &[Turn]) -> String {
    if turns.is_empty() {
        return "(nobody has spoken yet)".into();
    }
    turns.iter().map(|t| format!("{}: {}", t.speaker.id, t.text)).collect::<Vec<_>>().join("\n")
}

fn persona_prompt(persona: &Persona) -> String {
    let mut s = format!("Your name is {}. {}", persona.name, persona.system_prompt);
    if !persona.task_description.is_empty() {
        s.push_str("\n\nDiscussion task: ");
        s.push_str(&persona.task_description);
    }
    if !persona.assigned_preference.is_empty() {
        s.push_str("\n\n");
        s.push_str(&persona.assigned_preference);
    }
    s
}

/// User message for candidate and suggestion requests.
pub fn render_context(context: &ActiveContext) -> String {
    let mut s = String::new();
    if !context.summary.is_empty() {
        s.push_str("Earlier in the discussion: ");
        s.push_str(&context.summary);
        s.push_str("\n\n");
    }
    s.push_str("Recent turns:\n");
    s.push_str(&render_turns(&context.verbatim_turns));
    if let Some(hint) = context.current_suggestion.as_deref().filter(|h| !h.is_empty()) {
        s.push_str("\n\nDirection for your next contribution: ");
        s.push_str(hint);
    }
    s
}

const JUDGE: &str = "You moderate a live group discussion. Answer with yes or no only.";

impl AgentBackend for LiveBackend {
    fn generate_candidate(&self, context: &ActiveContext, persona: &Persona) -> Result<String, BackendError> {
        let user = format!("{}\n\nWhat do you say next? Reply with your spoken words only.", render_context(context));
        self.chat(&persona_prompt(persona), &user)
    }

    fn judge_relevance(&self, candidate: &str, recent_turns: &[Turn]) -> Result<bool, BackendError> {
        if recent_turns.is_empty() {
            return Ok(false);
        }
        let user = format!(
            "Recent turns:\n{}\n\nProposed contribution: {candidate}\n\nWould this contribution fit the conversation right now?",
            render_turns(recent_turns)
        );
        self.verdict(JUDGE, &user)
    }

    fn classify_follow_up(&self, utterance: &str, last_agent_utterance: &str) -> Result<bool, BackendError> {
        if utterance.trim().is_empty() {
            return Ok(false);
        }
        let user = format!(
            "The assistant last said: {last_agent_utterance}\n\nThen a participant said: {utterance}\n\nIs the participant responding to or asking about what the assistant said?"
        );
        self.verdict(JUDGE, &user)
    }

    fn summarize(&self, batch: &[Turn], prior_summary: &str, _persona: &Persona) -> Result<String, BackendError> {
        let prior = if prior_summary.is_empty() { "(none)" } else { prior_summary };
        let user = format!(
            "Summary so far: {prior}\n\nNew turns:\n{}\n\nWrite the updated summary in a few sentences. Keep who argued for what.",
            render_turns(batch)
        );
        self.chat("You keep a running summary of a group discussion.", &user)
    }

    fn suggest(&self, context: &ActiveContext, persona: &Persona) -> Result<String, BackendError> {
        let user = format!(
            "{}\n\nIn one sentence, name the point you should push next so that it follows the conversation and supports your position.",
            render_context(context)
        );
        self.chat(&persona_prompt(persona), &user)
    }
}
