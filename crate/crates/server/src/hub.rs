//! The actor that owns every session.
//!
//! Connections, timers and backend calls all talk to one task through a
//! channel, so sessions are only ever touched from one place. Engine steps
//! are cheap; anything slow (backend calls, sleeping timers, socket writes)
//! runs in its own task and reports back as a [`HubEvent`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use huddle_core::backend::{answer, AgentBackend, Persona};
use huddle_core::log::LogWriter;
use huddle_core::session::{Output, Session, SessionSettings};
use huddle_core::wire::{ErrorCode, WireMessage};
use huddle_core::{EngineEvent, Millis, ParticipantKind, ProtocolConfig, RequestId, TimerId, TimerKind};
use tokio::sync::{mpsc, oneshot};
use tokio::task::AbortHandle;
use tokio::time::Instant;
use tracing::{debug, error, warn};

use crate::config::{ConfigError, ServerConfig};

pub type ConnId = u64;

#[derive(Debug)]
pub enum HubEvent {
    Connected { conn: ConnId, outbox: mpsc::UnboundedSender<WireMessage> },
    Inbound { conn: ConnId, message: WireMessage },
    Closed { conn: ConnId },
    Timer { session: String, room: String, timer_id: TimerId, kind: TimerKind },
    Reply { session: String, room: String, event: EngineEvent },
    /// Writes pending log records; answers with the event-log paths.
    Flush { done: Option<oneshot::Sender<Vec<PathBuf>>> },
}

/// Cheap, cloneable way in to the hub.
#[derive(Debug, Clone)]
pub struct HubHandle {
    tx: mpsc::UnboundedSender<HubEvent>,
    next_conn: Arc<AtomicU64>,
}

impl HubHandle {
    pub fn next_conn_id(&self) -> ConnId {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    /// False once the hub has stopped.
    pub fn send(&self, event: HubEvent) -> bool {
        self.tx.send(event).is_ok()
    }

    /// Flushes every session's logs and returns the event-log paths.
    pub async fn flush(&self) -> Vec<PathBuf> {
        let (done, rx) = oneshot::channel();
        if !self.send(HubEvent::Flush { done: Some(done) }) {
            return Vec::new();
        }
        rx.await.unwrap_or_default()
    }
}

struct Conn {
    outbox: mpsc::UnboundedSender<WireMessage>,
    bound: Option<(String, String)>,
}

struct SessionEntry {
    session: Session,
    writer: LogWriter,
    epoch: Instant,
    timers: BTreeMap<(String, TimerId), AbortHandle>,
    aborted: BTreeSet<RequestId>,
    clients: BTreeMap<String, ConnId>,
}

impl SessionEntry {
    fn now(&self) -> Millis {
        self.epoch.elapsed().as_millis() as Millis
    }
}

pub struct Hub {
    log_dir: PathBuf,
    protocol: ProtocolConfig,
    persona: Persona,
    backend: Arc<dyn AgentBackend>,
    sessions: BTreeMap<String, SessionEntry>,
    conns: BTreeMap<ConnId, Conn>,
    tx: mpsc::UnboundedSender<HubEvent>,
}

/// Starts the hub task plus its periodic log flush.
pub fn spawn(config: &ServerConfig, backend: Arc<dyn AgentBackend>) -> Result<HubHandle, ConfigError> {
    config.validate()?;
    let (tx, mut rx) = mpsc::unbounded_channel();
    let mut hub = Hub {
        log_dir: config.log_dir.clone(),
        protocol: config.protocol.clone(),
        persona: config.persona()?,
        backend,
        sessions: BTreeMap::new(),
        conns: BTreeMap::new(),
        tx: tx.clone(),
    };
    tokio::spawn(async move {
        while let Some(event) = rx.recv().await {
            hub.on_event(event);
        }
    });
    let ticker = tx.clone();
    let period = Duration::from_millis(config.flush_interval_ms.max(1));
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        loop {
            interval.tick().await;
            if ticker.send(HubEvent::Flush { done: None }).is_err() {
                break;
            }
        }
    });
    Ok(HubHandle { tx, next_conn: Arc::new(AtomicU64::new(1)) })
}

impl Hub {
    fn on_event(&mut self, event: HubEvent) {
        match event {
            HubEvent::Connected { conn, outbox } => {
                self.conns.insert(conn, Conn { outbox, bound: None });
            }
            HubEvent::Inbound { conn, message } => self.inbound(conn, message),
            HubEvent::Closed { conn } => self.closed(conn),
            HubEvent::Timer { session, room, timer_id, kind } => {
                let Some(entry) = self.sessions.get_mut(&session) else { return };
                if entry.timers.remove(&(room.clone(), timer_id)).is_none() {
                    return;
                }
                let now = entry.now();
                let out = entry.session.timer_fired(&room, timer_id, kind, now);
                self.process(&session, out);
            }
            HubEvent::Reply { session, room, event } => {
                let Some(entry) = self.sessions.get_mut(&session) else { return };
                if event.request_id().is_some_and(|id| entry.aborted.remove(id)) {
                    debug!(session, room, "dropping reply to an aborted request");
                    return;
                }
                let now = entry.now();
                let out = entry.session.deliver(&room, event, now);
                self.process(&session, out);
            }
            HubEvent::Flush { done } => {
                let paths = self.flush_all();
                if let Some(done) = done {
                    let _ = done.send(paths);
                }
            }
        }
    }

    fn reply(&self, conn: ConnId, message: WireMessage) {
        if let Some(c) = self.conns.get(&conn) {
            let _ = c.outbox.send(message);
        }
    }

    fn inbound(&mut self, conn: ConnId, message: WireMessage) {
        let bound = match self.conns.get(&conn) {
            Some(c) => c.bound.clone(),
            None => return,
        };
        match (message, bound) {
            (WireMessage::CreateSession { session_id, mode }, _) => {
                let reply = self.create_session(session_id, mode);
                self.reply(conn, reply);
            }
            (WireMessage::ClientHello { .. }, Some(_)) => {
                self.reply(conn, WireMessage::error(ErrorCode::NotPermitted, "this connection has already joined"));
            }
            (WireMessage::ClientHello { session_id, participant }, None) => {
                if participant.kind == ParticipantKind::Agent {
                    self.reply(conn, WireMessage::error(ErrorCode::NotPermitted, "the agent does not connect as a client"));
                    return;
                }
                let Some(entry) = self.sessions.get_mut(&session_id) else {
                    self.reply(conn, WireMessage::error(ErrorCode::NoSuchSession, format!("no session {session_id}")));
                    return;
                };
                if let Some(old) = entry.clients.insert(participant.id.clone(), conn) {
                    if let Some(c) = self.conns.get_mut(&old) {
                        c.bound = None;
                        let _ = c.outbox.send(WireMessage::error(ErrorCode::NotPermitted, "replaced by a newer connection"));
                    }
                }
                if let Some(c) = self.conns.get_mut(&conn) {
                    c.bound = Some((session_id.clone(), participant.id.clone()));
                }
                let now = entry.now();
                let out = entry.session.connect(participant, now);
                self.process(&session_id, out);
            }
            (_, None) => {
                self.reply(conn, WireMessage::error(ErrorCode::NotJoined, "send client_hello first"));
            }
            (message, Some((session_id, participant))) => {
                let Some(entry) = self.sessions.get_mut(&session_id) else { return };
                let now = entry.now();
                let out = entry.session.handle(&participant, message, now);
                self.process(&session_id, out);
            }
        }
    }

    fn create_session(&mut self, session_id: String, mode: huddle_core::modes::Mode) -> WireMessage {
        if self.sessions.contains_key(&session_id) {
            return WireMessage::error(ErrorCode::SessionExists, format!("session {session_id} exists"));
        }
        let mut writer = match LogWriter::new(&self.log_dir) {
            Ok(w) => w,
            Err(e) => return WireMessage::error(ErrorCode::Internal, e.to_string()),
        };
        let mut settings = SessionSettings::new(session_id.clone(), mode);
        settings.config = self.protocol.clone();
        settings.persona = self.persona.clone();
        let session = Session::new(settings, 0);
        if let Err(e) = writer.flush(&session) {
            error!(session = session_id, error = %e, "cannot write room logs");
        }
        self.sessions.insert(
            session_id.clone(),
            SessionEntry {
                session,
                writer,
                epoch: Instant::now(),
                timers: BTreeMap::new(),
                aborted: BTreeSet::new(),
                clients: BTreeMap::new(),
            },
        );
        WireMessage::Ack { detail: format!("created {session_id}") }
    }

    fn closed(&mut self, conn: ConnId) {
        let Some(c) = self.conns.remove(&conn) else { return };
        let Some((session_id, participant)) = c.bound else { return };
        let Some(entry) = self.sessions.get_mut(&session_id) else { return };
        if entry.clients.get(&participant) != Some(&conn) {
            return;
        }
        entry.clients.remove(&participant);
        let now = entry.now();
        let out = entry.session.disconnect(&participant, now);
        self.process(&session_id, out);
    }

    fn process(&mut self, session_id: &str, outputs: Vec<Output>) {
        let Some(entry) = self.sessions.get_mut(session_id) else { return };
        for output in outputs {
            match output {
                Output::Send { to, message } => {
                    if let Some(c) = entry.clients.get(&to).and_then(|id| self.conns.get(id)) {
                        let _ = c.outbox.send(message);
                    }
                }
                Output::StartTimer { room, timer_id, kind, after_ms } => {
                    let tx = self.tx.clone();
                    let (session, r) = (session_id.to_string(), room.clone());
                    let task = tokio::spawn(async move {
                        tokio::time::sleep(Duration::from_millis(after_ms.max(0) as u64)).await;
                        let _ = tx.send(HubEvent::Timer { session, room: r, timer_id, kind });
                    });
                    if let Some(old) = entry.timers.insert((room, timer_id), task.abort_handle()) {
                        old.abort();
                    }
                }
                Output::CancelTimer { room, timer_id, .. } => {
                    if let Some(h) = entry.timers.remove(&(room, timer_id)) {
                        h.abort();
                    }
                }
                Output::Backend { room, request } => {
                    let tx = self.tx.clone();
                    let backend = Arc::clone(&self.backend);
                    let session = session_id.to_string();
                    tokio::spawn(async move {
                        let delay = backend.latency_ms(request.kind());
                        let event = match tokio::task::spawn_blocking(move || answer(backend.as_ref(), &request)).await {
                            Ok(event) => event,
                            Err(e) => {
                                error!(session, room, error = %e, "backend call panicked");
                                return;
                            }
                        };
                        if delay > 0 {
                            tokio::time::sleep(Duration::from_millis(delay as u64)).await;
                        }
                        let _ = tx.send(HubEvent::Reply { session, room, event });
                    });
                }
                Output::Abort { request_id, .. } => {
                    entry.aborted.insert(request_id);
                }
            }
        }
        for fault in entry.session.take_faults() {
            error!(session = session_id, fault, "engine fault");
        }
    }

    fn flush_all(&mut self) -> Vec<PathBuf> {
        let mut paths = Vec::new();
        for (id, entry) in &mut self.sessions {
            match entry.writer.flush(&entry.session) {
                Ok(p) => paths.extend(p),
                Err(e) => warn!(session = id, error = %e, "log flush failed"),
            }
        }
        paths
    }
}
