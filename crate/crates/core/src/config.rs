//! Timing and rate constants for the turn-taking protocol.

use serde::{Deserialize, Serialize};

use crate::model::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ProtocolConfig {
    /// Speaking window length, counted from the moment the window opens.
    pub window_budget_ms: Millis,
    pub follow_up_grace_ms: Millis,
    pub lull_threshold_ms: Millis,
    pub hand_timeout_ms: Millis,
    pub forced_raise_after_ms: Millis,
    pub active_context_turns: u32,
    pub relevance_context_turns: u32,
    pub suggestion_period_ms: Millis,
    pub max_consecutive_proactive: u32,
    pub min_proactive_gap_ms: Millis,
    pub summary_batch_turns: u32,
    /// Time since the agent's last contribution after which a relevance
    /// checked hand raise may be attempted.
    pub hand_raise_min_gap_ms: Millis,
    /// Human turns since the agent's last contribution after which a
    /// relevance checked hand raise may be attempted.
    pub hand_raise_min_turns: u32,
    /// Estimated speaking time per word of agent output; bounds how long
    /// the agent holds an open window.
    pub agent_speech_ms_per_word: Millis,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            window_budget_ms: 5_000,
            follow_up_grace_ms: 5_000,
            lull_threshold_ms: 3_000,
            hand_timeout_ms: 15_000,
            forced_raise_after_ms: 120_000,
            active_context_turns: 10,
            relevance_context_turns: 10,
            suggestion_period_ms: 60_000,
            max_consecutive_proactive: 2,
            min_proactive_gap_ms: 20_000,
            summary_batch_turns: 5,
            hand_raise_min_gap_ms: 15_000,
            hand_raise_min_turns: 4,
            agent_speech_ms_per_word: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field} must be {requirement}")]
pub struct ConfigViolation {
    pub field: &'static str,
    pub requirement: &'static str,
}

impl ProtocolConfig {
    /// Returns every violated constraint; an empty config error list means
    /// the config is usable.
    pub fn validate(&self) -> Result<(), Vec<ConfigViolation>> {
        let mut errors = Vec::new();
        let durations = [
            ("windowBudgetMs", self.window_budget_ms),
            ("followUpGraceMs", self.follow_up_grace_ms),
            ("lullThresholdMs", self.lull_threshold_ms),
            ("handTimeoutMs", self.hand_timeout_ms),
            ("forcedRaiseAfterMs", self.forced_raise_after_ms),
            ("suggestionPeriodMs", self.suggestion_period_ms),
            ("minProactiveGapMs", self.min_proactive_gap_ms),
            ("handRaiseMinGapMs", self.hand_raise_min_gap_ms),
            ("agentSpeechMsPerWord", self.agent_speech_ms_per_word),
        ];
        for (field, value) in durations {
            if value <= 0 {
                errors.push(ConfigViolation { field, requirement: "> 0" });
            }
        }
        let counts = [
            ("activeContextTurns", self.active_context_turns),
            ("relevanceContextTurns", self.relevance_context_turns),
            ("summaryBatchTurns", self.summary_batch_turns),
        ];
        for (field, value) in counts {
            if value == 0 {
                errors.push(ConfigViolation { field, requirement: "> 0" });
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}
