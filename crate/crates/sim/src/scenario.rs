//! Scenario files: who takes part, what they say and when, and how the
//! scripted backend answers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use huddle_core::backend::{BackendError, BackendScript, Persona};
use huddle_core::modes::{Mode, UserControl};
use huddle_core::{Millis, ProtocolConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_HORIZON_MS: Millis = 15 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    AgentSpeech,
    HandRaise,
}

/// One scripted action. Exactly one of `at` and `after` is set. Without a
/// `command` the step is an utterance; empty text is a bare pause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Step {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Millis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<Trigger>,
    #[serde(default)]
    pub delay_ms: Millis,
    pub speaker: String,
    #[serde(default)]
    pub text: String,
    #[serde(default = "default_duration")]
    pub duration_ms: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<UserControl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

fn default_duration() -> Millis {
    1000
}

impl Step {
    pub fn say(at: Millis, speaker: &str, text: &str, duration_ms: Millis) -> Self {
        Self {
            at: Some(at),
            after: None,
            delay_ms: 0,
            speaker: speaker.into(),
            text: text.into(),
            duration_ms,
            command: None,
            target: None,
        }
    }

    pub fn command(at: Millis, speaker: &str, cmd: UserControl) -> Self {
        Self { command: Some(cmd), duration_ms: 0, ..Self::say(at, speaker, "", 0) }
    }

    pub fn after(trigger: Trigger, delay_ms: Millis, speaker: &str, text: &str, duration_ms: Millis) -> Self {
        Self { at: None, after: Some(trigger), delay_ms, ..Self::say(0, speaker, text, duration_ms) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackendSource {
    Inline(BackendScript),
    /// Path to a script file, relative to the scenario file.
    File(PathBuf),
}

impl Default for BackendSource {
    fn default() -> Self {
        BackendSource::Inline(BackendScript::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scenario {
    pub mode: Mode,
    #[serde(default)]
    pub config: ProtocolConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon_ms: Millis,
    #[serde(default = "default_participants")]
    pub participants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<Persona>,
    #[serde(default)]
    pub script: Vec<Step>,
    #[serde(default)]
    pub backend_script: BackendSource,
    /// Extra backend latency drawn uniformly from `0..=jitterMs` per request.
    #[serde(default)]
    pub jitter_ms: Millis,
}

fn default_horizon() -> Millis {
    DEFAULT_HORIZON_MS
}

fn default_participants() -> Vec<String> {
    vec!["D1".into(), "D2".into()]
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("step {index}: {detail}")]
    BadStep { index: usize, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl Scenario {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            config: ProtocolConfig::default(),
            seed: 0,
            horizon_ms: DEFAULT_HORIZON_MS,
            participants: default_participants(),
            persona: None,
            script: Vec::new(),
            backend_script: BackendSource::default(),
            jitter_ms: 0,
        }
    }

    /// Reads a scenario and inlines a backend script given by path.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let mut scenario: Scenario =
            serde_json::from_str(&raw).map_err(|source| ScenarioError::Parse { path: path.into(), source })?;
        if let BackendSource::File(rel) = &scenario.backend_script {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            scenario.backend_script = BackendSource::Inline(BackendScript::load(&full)?);
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn backend(&self) -> Result<BackendScript, ScenarioError> {
        match &self.backend_script {
            BackendSource::Inline(s) => Ok(s.clone()),
            BackendSource::File(p) => Ok(BackendScript::load(p)?),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.config.validate().map_err(|errs| {
            ScenarioError::Config(errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))
        })?;
        if self.horizon_ms <= 0 {
            return Err(ScenarioError::Invalid("horizonMs must be > 0".into()));
        }
        if self.jitter_ms < 0 {
            return Err(ScenarioError::Invalid("jitterMs must be >= 0".into()));
        }
        if self.participants.is_empty() {
            return Err(ScenarioError::Invalid("no participants".into()));
        }
        if let Some(p) = &self.persona {
            p.validate()?;
        }
        let mut last_at: BTreeMap<&str, Millis> = BTreeMap::new();
        for (index, step) in self.script.iter().enumerate() {
            let bad = |detail: &str| ScenarioError::BadStep { index, detail: detail.into() };
            if step.at.is_some() == step.after.is_some() {
                return Err(bad("exactly one of at and after must be set"));
            }
            if !self.participants.contains(&step.speaker) {
                return Err(bad(&format!("unknown speaker {}", step.speaker)));
            }
            if step.duration_ms < 0 || step.delay_ms < 0 {
                return Err(bad("durations must be >= 0"));
            }
            if let Some(at) = step.at {
                if at < 0 {
                    return Err(bad("at must be >= 0"));
                }
                let prev = last_at.insert(step.speaker.as_str(), at);
                if prev.is_some_and(|p| p > at) {
                    return Err(bad(&format!("times for {} go backwards", step.speaker)));
                }
            }
        }
        Ok(())
    }
}
