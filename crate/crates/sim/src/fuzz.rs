//! Random scenario generation and multi-seed invariant runs.

use std::collections::BTreeMap;

use huddle_core::backend::{BackendScript, TextScript, VerdictScript};
use huddle_core::modes::{Mode, UserControl};
use huddle_core::room::LogBody;
use huddle_core::{EngineAction, Millis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::invariants::Violation;
use crate::run::{run_scenario, Trace};
use crate::scenario::{BackendSource, Scenario, ScenarioError, Step, Trigger};

const SPEAKERS: [&str; 2] = ["D1", "D2"];

const PHRASES: &[&str] = &[
    "I think the budget matters most here",
    "we could start with the cheapest option",
    "what about the students who live far away",
    "that sounds fine to me",
    "hmm",
    "the schedule is the hard part",
    "maybe we should vote on it",
    "I disagree, the science lab comes first",
    "why would that work better",
    "okay let us write that down",
    "pizza with pineapple is the obvious choice",
    "global citizenship means caring about others",
    "can you explain that again",
    "so do we agree then",
];

fn utterance(rng: &mut ChaCha8Rng) -> String {
    let base = *PHRASES.choose(rng).expect("phrases are not empty");
    match rng.gen_range(0..10) {
        0 | 1 => format!("Lisa, {base}?"),
        2 => format!("{base}?"),
        3 => String::new(),
        _ => base.to_string(),
    }
}

fn commands_for(mode: Mode) -> &'static [UserControl] {
    match mode {
        Mode::Roundtable => &[],
        Mode::Peripheral => &[UserControl::InviteAgent, UserControl::RemoveAgent],
        Mode::Breakout => &[UserControl::EnterBreakout, UserControl::ReturnMain, UserControl::CallBackPartner],
    }
}

fn backend(rng: &mut ChaCha8Rng) -> BackendScript {
    let queue = (0..rng.gen_range(0..40))
        .map(|i| (!rng.gen_bool(0.15)).then(|| format!("candidate {i} about the budget and the schedule")))
        .collect();
    let verdicts = |rng: &mut ChaCha8Rng| VerdictScript {
        queue: (0..rng.gen_range(0..20)).map(|_| (!rng.gen_bool(0.1)).then(|| rng.gen_bool(0.5))).collect(),
        latency_ms: rng.gen_range(50..1_500),
    };
    BackendScript {
        candidate: TextScript {
            queue,
            fallback: rng.gen_bool(0.8).then(|| "here is one more idea for the group".to_string()),
            latency_ms: rng.gen_range(100..7_000),
        },
        relevance: verdicts(rng),
        follow_up: verdicts(rng),
        suggestion: TextScript {
            queue: Vec::new(),
            fallback: Some("consider the cost".into()),
            latency_ms: rng.gen_range(100..2_000),
        },
        ..BackendScript::default()
    }
}

/// A random two-person discussion for `mode`, fully determined by `seed`.
pub fn generate(seed: u64, mode: Mode) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ ((mode as u64) << 40));
    let mut scenario = Scenario::new(mode);
    scenario.seed = seed;
    scenario.jitter_ms = rng.gen_range(0..800);
    scenario.backend_script = BackendSource::Inline(backend(&mut rng));
    let horizon = scenario.horizon_ms;
    let commands = commands_for(mode);
    let mut free_at: BTreeMap<&str, Millis> = SPEAKERS.iter().map(|s| (*s, 0)).collect();
    let mut t: Millis = rng.gen_range(0..3_000);
    while t < horizon - 10_000 {
        let speaker = *SPEAKERS.choose(&mut rng).expect("speakers are not empty");
        let start = t.max(free_at[speaker]);
        if !commands.is_empty() && rng.gen_bool(0.06) {
            let cmd = *commands.choose(&mut rng).expect("checked non-empty");
            scenario.script.push(Step::command(start, speaker, cmd));
            free_at.insert(speaker, start);
        } else {
            let text = utterance(&mut rng);
            let duration = rng.gen_range(300..6_000);
            scenario.script.push(Step::say(start, speaker, &text, duration));
            free_at.insert(speaker, start + duration);
        }
        t = start
            + match rng.gen_range(0..100) {
                0..=4 => rng.gen_range(60_000..140_000),
                5..=19 => rng.gen_range(0..800),
                _ => rng.gen_range(200..4_000),
            };
    }
    // A couple of interruptions shortly after the agent starts talking.
    for _ in 0..rng.gen_range(0..3) {
        let speaker = *SPEAKERS.choose(&mut rng).expect("speakers are not empty");
        let trigger = if rng.gen_bool(0.7) { Trigger::AgentSpeech } else { Trigger::HandRaise };
        scenario.script.push(Step::after(trigger, rng.gen_range(0..1_500), speaker, "wait, one moment", 800));
    }
    scenario
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Coverage {
    pub windows: BTreeMap<String, u64>,
    pub agent_turns: u64,
    pub hand_raises: u64,
    pub mutes: u64,
    pub extensions: u64,
}

impl Coverage {
    pub fn absorb(&mut self, trace: &Trace) {
        for e in &trace.entries {
            let LogBody::Action(action) = &e.body else { continue };
            match action {
                EngineAction::OpenWindow { reason, .. } => {
                    *self.windows.entry(format!("{reason:?}")).or_default() += 1;
                }
                EngineAction::EmitAgentSpeech { .. } => self.agent_turns += 1,
                EngineAction::RaiseHand { .. } => self.hand_raises += 1,
                EngineAction::MuteAgent => self.mutes += 1,
                EngineAction::ExtendWindow => self.extensions += 1,
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedViolation {
    pub seed: u64,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FuzzReport {
    pub mode: Mode,
    pub runs: u64,
    pub violations: Vec<SeedViolation>,
    pub coverage: Coverage,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn fuzz(seeds: impl IntoIterator<Item = u64>, mode: Mode) -> Result<FuzzReport, ScenarioError> {
    let mut report = FuzzReport { mode, runs: 0, violations: Vec::new(), coverage: Coverage::default() };
    for seed in seeds {
        let trace = run_scenario(&generate(seed, mode))?;
        report.runs += 1;
        report.coverage.absorb(&trace);
        report
            .violations
            .extend(trace.violations().iter().cloned().map(|violation| SeedViolation { seed, violation }));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate() {
        for seed in 0..20 {
            for mode in [Mode::Roundtable, Mode::Peripheral, Mode::Breakout] {
                generate(seed, mode).validate().unwrap();
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(7, Mode::Peripheral), generate(7, Mode::Peripheral));
        assert_ne!(generate(7, Mode::Peripheral), generate(8, Mode::Peripheral));
    }
}
