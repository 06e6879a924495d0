//! JSONL persistence and replay of room logs.
//!
//! Each logged room gets two files: `<session>__<room>.events.jsonl`, which
//! holds the header and every event and action in order, and
//! `<session>__<room>.transcript.jsonl`, which holds the turns followed by
//! one summary record.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::Turn;
use crate::room::{LogBody, LogRecord, RoomError, RoomRuntime};
use crate::session::Session;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("log does not start with a header")]
    MissingHeader,
    #[error("replay failed at record {index}: {source}")]
    Replay { index: usize, source: RoomError },
    #[error("replay diverged at record {index}")]
    Diverged { index: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.to_path_buf(), source }
}

pub fn file_stem(session_id: &str, room_id: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
    };
    format!("{}__{}", clean(session_id), clean(room_id))
}

pub fn events_path(dir: &Path, room: &RoomRuntime) -> PathBuf {
    dir.join(format!("{}.events.jsonl", file_stem(&room.header().session_id, &room.room().id)))
}

pub fn transcript_path(dir: &Path, room: &RoomRuntime) -> PathBuf {
    dir.join(format!("{}.transcript.jsonl", file_stem(&room.header().session_id, &room.room().id)))
}

pub fn render(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log records always serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryRecord {
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranscriptLine {
    Turn(Turn),
    Summary(SummaryRecord),
}

pub fn render_transcript(room: &RoomRuntime) -> String {
    let mut out = String::new();
    for turn in room.transcript().history() {
        out.push_str(&serde_json::to_string(&turn).expect("turns always serialize"));
        out.push('\n');
    }
    let summary = SummaryRecord { summary: room.transcript().summary.clone() };
    out.push_str(&serde_json::to_string(&summary).expect("summary always serializes"));
    out.push('\n');
    out
}

pub fn read_transcript(path: &Path) -> Result<(Vec<Turn>, String), LogError> {
    let mut turns = Vec::new();
    let mut summary = String::new();
    for (_, value) in read_lines::<TranscriptLine>(path)? {
        match value {
            TranscriptLine::Turn(t) => turns.push(t),
            TranscriptLine::Summary(s) => summary = s.summary,
        }
    }
    Ok((turns, summary))
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, LogError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value =
            serde_json::from_str(&line).map_err(|source| LogError::Parse { path: path.to_path_buf(), line: i + 1, source })?;
        out.push((i, value));
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    Ok(read_lines(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Rebuilds a room from its header and logged events.
pub fn replay(records: &[LogRecord]) -> Result<RoomRuntime, LogError> {
    let Some(LogRecord { body: LogBody::Header(header), .. }) = records.first() else {
        return Err(LogError::MissingHeader);
    };
    let mut room = RoomRuntime::new((**header).clone());
    for (index, record) in records.iter().enumerate().skip(1) {
        if let LogBody::Event(event) = &record.body {
            room.handle(event, record.t).map_err(|source| LogError::Replay { index, source })?;
        }
    }
    Ok(room)
}

/// Replays `records` and checks that the rebuilt room logs exactly the
/// same records, actions included.
pub fn verify_replay(records: &[LogRecord]) -> Result<RoomRuntime, LogError> {
    let room = replay(records)?;
    let rebuilt = room.log();
    if let Some(index) = (0..records.len().max(rebuilt.len())).find(|&i| records.get(i) != rebuilt.get(i)) {
        return Err(LogError::Diverged { index });
    }
    Ok(room)
}

/// Writes every logged room of `session` to `dir`, replacing old files.
pub fn persist(session: &Session, dir: &Path) -> Result<Vec<PathBuf>, LogError> {
    let mut writer = LogWriter::new(dir)?;
    writer.flush(session)
}

/// Incremental writer: appends only the records added since the last flush.
#[derive(Debug)]
pub struct LogWriter {
    dir: PathBuf,
    flushed: BTreeMap<PathBuf, usize>,
}

impl LogWriter {
    pub fn new(dir: &Path) -> Result<Self, LogError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), flushed: BTreeMap::new() })
    }

    /// Returns the event-log paths of all logged rooms.
    pub fn flush(&mut self, session: &Session) -> Result<Vec<PathBuf>, LogError> {
        let mut paths = Vec::new();
        for room in session.all_rooms().filter(|r| r.header().logged) {
            let path = events_path(&self.dir, room);
            let done = self.flushed.get(&path).copied();
            let records = room.log();
            if done != Some(records.len()) {
                let (mut file, from) = match done {
                    Some(n) => (OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?, n),
                    None => (File::create(&path).map_err(io_err(&path))?, 0),
                };
                file.write_all(render(&records[from..]).as_bytes()).map_err(io_err(&path))?;
                self.flushed.insert(path.clone(), records.len());
                let tpath = transcript_path(&self.dir, room);
                fs::write(&tpath, render_transcript(room)).map_err(io_err(&tpath))?;
            }
            paths.push(path);
        }
        Ok(paths)
    }
}
