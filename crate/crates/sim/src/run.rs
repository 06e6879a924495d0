//! Virtual-clock driver: feeds a [`Session`] from a scenario script, the
//! scripted backend and its own timer wheel, and records the interleaved
//! room logs as a trace.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;
use std::path::Path;

use huddle_core::backend::{answer, AgentBackend, BackendRequest, ScriptedBackend};
use huddle_core::engine::EngineState;
use huddle_core::modes::ModeCommand;
use huddle_core::room::{LogBody, LogRecord};
use huddle_core::session::{Output, Session, SessionSettings};
use huddle_core::wire::WireMessage;
use huddle_core::{EngineAction, EngineEvent, Millis, ParticipantId, RequestId, TimerId, TimerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::invariants::{check_invariants, Violation};
use crate::scenario::{Scenario, ScenarioError, Step, Trigger};

pub const SESSION_ID: &str = "sim";

/// One line of a trace: a room log record tagged with its room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: Millis,
    pub room: String,
    #[serde(flatten)]
    pub body: LogBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoomFinal {
    pub engine: Option<EngineState>,
    pub turns: usize,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Outcome {
    pub horizon_ms: Millis,
    pub final_state: BTreeMap<String, RoomFinal>,
    pub violations: Vec<Violation>,
    pub script_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub outcome: Outcome,
}

impl Trace {
    pub fn violations(&self) -> &[Violation] {
        &self.outcome.violations
    }

    /// JSONL: every entry, then one outcome line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.outcome).expect("outcome serializes"));
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.render().as_bytes())
    }

    /// Reads the entries of a trace file; the outcome line is skipped.
    pub fn read_entries(path: &Path) -> Result<Vec<TraceEntry>, ScenarioError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let mut entries = Vec::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<TraceEntry>(line) {
                Ok(e) => entries.push(e),
                Err(source) => {
                    if serde_json::from_str::<Outcome>(line).is_err() {
                        return Err(ScenarioError::Parse { path: path.into(), source });
                    }
                }
            }
        }
        Ok(entries)
    }

    /// Per-room logs reassembled from the trace, for replay.
    pub fn room_logs(&self) -> BTreeMap<String, Vec<LogRecord>> {
        let mut logs: BTreeMap<String, Vec<LogRecord>> = BTreeMap::new();
        for e in &self.entries {
            logs.entry(e.room.clone()).or_default().push(LogRecord { t: e.t, body: e.body.clone() });
        }
        logs
    }
}

/// Same-instant ordering: speech onsets before speech ends, then commands,
/// backend replies and timers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Priority {
    SpeechStart = 0,
    SpeechEnd = 1,
    Command = 2,
    Backend = 3,
    Timer = 4,
}

#[derive(Debug, Clone)]
enum Item {
    Wire { from: String, message: WireMessage },
    Reply { room: String, event: EngineEvent },
    Timer { room: String, timer_id: TimerId, kind: TimerKind },
}

#[derive(Debug)]
struct Queued {
    t: Millis,
    priority: Priority,
    seq: u64,
    item: Item,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}
impl Queued {
    fn key(&self) -> (Millis, Priority, u64) {
        (self.t, self.priority, self.seq)
    }
}

struct Driver {
    session: Session,
    backend: ScriptedBackend,
    rng: ChaCha8Rng,
    jitter_ms: Millis,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    live_timers: BTreeSet<(String, TimerId)>,
    aborted: BTreeSet<RequestId>,
    offsets: BTreeMap<String, usize>,
    entries: Vec<TraceEntry>,
    faults: Vec<Violation>,
    steps: Vec<Step>,
    cursor: usize,
    /// A trigger step only counts occurrences from the time the preceding
    /// step runs.
    armed_from: Millis,
}

impl Driver {
    fn push(&mut self, t: Millis, priority: Priority, item: Item) {
        self.seq += 1;
        self.queue.push(Reverse(Queued { t, priority, seq: self.seq, item }));
    }

    fn schedule_step(&mut self, step: &Step, t: Millis) {
        self.armed_from = t;
        if let Some(cmd) = step.command {
            let message =
                WireMessage::ModeCommand(ModeCommand { cmd, issuer: step.speaker.clone(), target: step.target.clone() });
            self.push(t, Priority::Command, Item::Wire { from: step.speaker.clone(), message });
            return;
        }
        self.push(t, Priority::SpeechStart, Item::Wire { from: step.speaker.clone(), message: WireMessage::SpeechStart { at: Some(t) } });
        let end = t + step.duration_ms;
        let message = WireMessage::Utterance { text: step.text.clone(), started_at: Some(t), ended_at: Some(end) };
        self.push(end, Priority::SpeechEnd, Item::Wire { from: step.speaker.clone(), message });
    }

    /// Schedules absolute steps up to the next trigger step, which runs
    /// once `seen` contains its trigger.
    fn release(&mut self, now: Millis, mut seen: &[Trigger]) {
        while let Some(step) = self.steps.get(self.cursor).cloned() {
            match (step.at, step.after) {
                (Some(at), _) => {
                    self.schedule_step(&step, at.max(now));
                }
                (None, Some(trigger)) if now >= self.armed_from && seen.contains(&trigger) => {
                    self.schedule_step(&step, now + step.delay_ms);
                    // One occurrence releases one step.
                    seen = &[];
                }
                _ => return,
            }
            self.cursor += 1;
        }
    }

    fn process(&mut self, outputs: Vec<Output>, now: Millis) {
        for out in outputs {
            match out {
                Output::StartTimer { room, timer_id, kind, after_ms } => {
                    self.live_timers.insert((room.clone(), timer_id));
                    self.push(now + after_ms, Priority::Timer, Item::Timer { room, timer_id, kind });
                }
                Output::CancelTimer { room, timer_id, .. } => {
                    self.live_timers.remove(&(room, timer_id));
                }
                Output::Backend { room, request } => self.call_backend(room, request, now),
                Output::Abort { request_id, .. } => {
                    self.aborted.insert(request_id);
                }
                Output::Send { .. } => {}
            }
        }
        for fault in self.session.take_faults() {
            self.faults.push(Violation::new("engine-fault", now, "", fault));
        }
    }

    fn call_backend(&mut self, room: String, request: BackendRequest, now: Millis) {
        let event = answer(&self.backend, &request);
        let jitter = if self.jitter_ms > 0 { self.rng.gen_range(0..=self.jitter_ms) } else { 0 };
        let latency = self.backend.latency_ms(request.kind()) + jitter;
        self.push(now + latency, Priority::Backend, Item::Reply { room, event });
    }

    /// Moves new room-log records into the trace and reports which
    /// triggers they contain.
    fn collect(&mut self) -> Vec<Trigger> {
        let mut seen = Vec::new();
        for room in self.session.all_rooms().filter(|r| r.header().logged) {
            let id = room.room().id.clone();
            let from = self.offsets.get(&id).copied().unwrap_or(0);
            let log = room.log();
            for record in &log[from..] {
                match &record.body {
                    LogBody::Action(EngineAction::EmitAgentSpeech { .. }) => seen.push(Trigger::AgentSpeech),
                    LogBody::Action(EngineAction::RaiseHand { .. }) => seen.push(Trigger::HandRaise),
                    _ => {}
                }
                self.entries.push(TraceEntry { t: record.t, room: id.clone(), body: record.body.clone() });
            }
            self.offsets.insert(id, log.len());
        }
        seen
    }
}

/// Runs a scenario to its horizon. Deterministic in (scenario, seed).
pub fn run_scenario(scenario: &Scenario) -> Result<Trace, ScenarioError> {
    scenario.validate()?;
    let mut settings = SessionSettings::new(SESSION_ID, scenario.mode);
    settings.config = scenario.config.clone();
    if let Some(p) = &scenario.persona {
        settings.persona = p.clone();
    }
    let session = Session::new(settings, 0);
    let mut d = Driver {
        session,
        backend: ScriptedBackend::new(scenario.backend()?),
        rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        jitter_ms: scenario.jitter_ms,
        queue: BinaryHeap::new(),
        seq: 0,
        live_timers: BTreeSet::new(),
        aborted: BTreeSet::new(),
        offsets: BTreeMap::new(),
        entries: Vec::new(),
        faults: Vec::new(),
        steps: scenario.script.clone(),
        cursor: 0,
        armed_from: 0,
    };

    let main = d.session.main_room().to_string();
    for p in &scenario.participants {
        let out = d.session.connect(ParticipantId::human(p.clone()), 0);
        d.process(out, 0);
        let out = d.session.handle(p, WireMessage::JoinRoom { room: main.clone() }, 0);
        d.process(out, 0);
    }
    d.collect();
    d.release(0, &[]);

    while let Some(Reverse(next)) = d.queue.pop() {
        if next.t > scenario.horizon_ms {
            break;
        }
        let now = next.t;
        let outputs = match next.item {
            Item::Wire { from, message } => d.session.handle(&from, message, now),
            Item::Reply { room, event } => {
                let aborted = event.request_id().is_some_and(|id| d.aborted.remove(id));
                if aborted {
                    Vec::new()
                } else {
                    d.session.deliver(&room, event, now)
                }
            }
            Item::Timer { room, timer_id, kind } => {
                if d.live_timers.remove(&(room.clone(), timer_id)) {
                    d.session.timer_fired(&room, timer_id, kind, now)
                } else {
                    Vec::new()
                }
            }
        };
        d.process(outputs, now);
        let seen = d.collect();
        if !seen.is_empty() {
            d.release(now, &seen);
        }
    }

    let mut script_errors = Vec::new();
    if let Some(step) = d.steps.get(d.cursor) {
        script_errors.push(format!(
            "step {} waits for {:?} which never happened before the horizon; {} step(s) not run",
            d.cursor,
            step.after.unwrap_or(Trigger::AgentSpeech),
            d.steps.len() - d.cursor
        ));
    }

    let final_state = d
        .session
        .all_rooms()
        .filter(|r| r.header().logged)
        .map(|r| {
            let fin = RoomFinal {
                engine: r.engine().cloned(),
                turns: r.transcript().len(),
                summary: r.transcript().summary.clone(),
            };
            (r.room().id.clone(), fin)
        })
        .collect();

    let mut violations = d.faults;
    violations.extend(check_invariants(&d.entries, scenario.horizon_ms, None));
    Ok(Trace {
        entries: d.entries,
        outcome: Outcome { horizon_ms: scenario.horizon_ms, final_state, violations, script_errors },
    })
}
