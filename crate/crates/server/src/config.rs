//! Server configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use huddle_core::backend::{AgentBackend, BackendScript, Persona, ScriptedBackend};
use huddle_core::ProtocolConfig;
use serde::{Deserialize, Serialize};

use crate::live::{LiveBackend, LiveConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Parse(PathBuf, #[source] serde_json::Error),
    #[error("protocol config: {0}")]
    Protocol(String),
    #[error("{0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum BackendChoice {
    /// Deterministic queues and rules from a script file. Without a file
    /// every queue is empty and the rules alone answer.
    Scripted {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Live(LiveConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ServerConfig {
    /// Room logs and transcripts go here, one pair of files per room.
    #[serde(default = "default_log_dir")]
    pub log_dir: PathBuf,
    #[serde(default = "default_flush_ms")]
    pub flush_interval_ms: u64,
    pub backend: BackendChoice,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    /// Bundled discussion task (1 to 3) to take the persona from.
    #[serde(default)]
    pub persona_task: Option<usize>,
    /// Persona file; wins over `personaTask`.
    #[serde(default)]
    pub persona_file: Option<PathBuf>,
}

fn default_log_dir() -> PathBuf {
    PathBuf::from("logs")
}

fn default_flush_ms() -> u64 {
    1000
}

impl ServerConfig {
    /// Scripted backend, default protocol, logs under `log_dir`.
    pub fn scripted(log_dir: impl Into<PathBuf>, script: Option<PathBuf>) -> Self {
        Self {
            log_dir: log_dir.into(),
            flush_interval_ms: default_flush_ms(),
            backend: BackendChoice::Scripted { script },
            protocol: ProtocolConfig::default(),
            persona_task: None,
            persona_file: None,
        }
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let mut cfg: ServerConfig = serde_json::from_str(&raw).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.log_dir);
        if let Some(p) = cfg.persona_file.as_mut() {
            rebase(p);
        }
        if let BackendChoice::Scripted { script: Some(p) } = &mut cfg.backend {
            rebase(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.protocol.validate().map_err(|v| {
            ConfigError::Protocol(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        if let Some(n) = self.persona_task {
            if Persona::task(n).is_none() {
                return Err(ConfigError::Backend(format!("personaTask {n} does not exist (1 to 3)")));
            }
        }
        Ok(())
    }

    pub fn persona(&self) -> Result<Persona, ConfigError> {
        if let Some(path) = &self.persona_file {
            return Persona::load(path).map_err(|e| ConfigError::Backend(e.to_string()));
        }
        Ok(self.persona_task.and_then(Persona::task).unwrap_or_default())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn AgentBackend>, ConfigError> {
        match &self.backend {
            BackendChoice::Scripted { script } => {
                let script = match script {
                    Some(p) => BackendScript::load(p).map_err(|e| ConfigError::Backend(e.to_string()))?,
                    None => BackendScript::default(),
                };
                Ok(Arc::new(ScriptedBackend::new(script)))
            }
            BackendChoice::Live(live) => {
                Ok(Arc::new(LiveBackend::from_env(live.clone()).map_err(|e| ConfigError::Backend(e.to_string()))?))
            }
        }
    }
}
