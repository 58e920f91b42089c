use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::protocol::{
    read_frame, write_frame, CommandFrame, ErrorCode, EventKind, FrameError, Hello, ScenarioSource, ServerFrame,
    StartSession, WireCommand, WireEvent, PROTOCOL_VERSION,
};
use crate::ids::AgentId;
use crate::knowledge::{extract_spec, is_probably_text};
use crate::scenes::bundled_scene;
use crate::session::{CommandChannel, Phase, Session, SessionConfig, SessionError, SessionEvent};
use crate::world::parse_scenario;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Pause between ticks of a running session; zero runs flat out.
    pub tick_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            tick_interval: Duration::from_millis(100),
        }
    }
}

/// A running gateway. Dropping it stops accepting connections.
#[derive(Debug)]
pub struct Gateway {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    hub: Arc<Hub>,
    accept: Option<JoinHandle<()>>,
}

impl Gateway {
    /// Binds `addr` and starts accepting clients on a background thread.
    pub fn serve(addr: impl ToSocketAddrs + std::fmt::Display, config: GatewayConfig) -> Result<Self, GatewayError> {
        let listener = TcpListener::bind(&addr).map_err(|source| GatewayError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        let local = listener.local_addr().map_err(|source| GatewayError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        let stop = Arc::new(AtomicBool::new(false));
        let hub = Arc::new(Hub {
            config,
            sessions: Mutex::new(BTreeMap::new()),
        });
        let accept = {
            let stop = stop.clone();
            let hub = hub.clone();
            thread::spawn(move || accept_loop(listener, hub, stop))
        };
        info!(addr = %local, "gateway listening");
        Ok(Self {
            addr: local,
            stop,
            hub,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Ids of sessions created so far.
    pub fn sessions(&self) -> Vec<String> {
        lock(&self.hub.sessions).keys().cloned().collect()
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
    }

    fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
        lock(&self.hub.sessions).clear();
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Poisoning only follows a panic elsewhere; keep serving what is left.
fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug)]
struct Hub {
    config: GatewayConfig,
    sessions: Mutex<BTreeMap<String, Arc<Slot>>>,
}

impl Hub {
    fn get(&self, name: &str) -> Option<Arc<Slot>> {
        lock(&self.sessions).get(name).cloned()
    }

    fn get_or_create(&self, name: &str) -> Arc<Slot> {
        lock(&self.sessions)
            .entry(name.to_string())
            .or_insert_with(|| Slot::spawn(name.to_string(), self.config.tick_interval))
            .clone()
    }
}

type Reply = Result<Value, (ErrorCode, String)>;

struct Job {
    command: WireCommand,
    reply: mpsc::Sender<Reply>,
}

/// Per-session command queue and event feed.
#[derive(Debug)]
struct Slot {
    jobs: mpsc::Sender<Job>,
    feed: Arc<Mutex<Feed>>,
}

impl std::fmt::Debug for Job {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.command.name())
    }
}

#[derive(Debug, Default)]
struct Feed {
    history: Vec<WireEvent>,
    subscribers: BTreeMap<u64, mpsc::Sender<ServerFrame>>,
    last_seq: u64,
}

impl Slot {
    fn spawn(name: String, tick: Duration) -> Arc<Self> {
        let (jobs, rx) = mpsc::channel();
        let feed = Arc::new(Mutex::new(Feed::default()));
        let actor = Actor {
            name,
            feed: feed.clone(),
            session: None,
            reported: false,
        };
        thread::spawn(move || actor.run(rx, tick));
        Arc::new(Self { jobs, feed })
    }

    fn submit(&self, command: WireCommand) -> Reply {
        let (reply, rx) = mpsc::channel();
        self.jobs
            .send(Job { command, reply })
            .map_err(|_| (ErrorCode::UnknownSession, "session is shutting down".to_string()))?;
        rx.recv()
            .unwrap_or_else(|_| Err((ErrorCode::UnknownSession, "session is shutting down".to_string())))
    }
}

/// Owns one session; commands from every client serialize here.
struct Actor {
    name: String,
    feed: Arc<Mutex<Feed>>,
    session: Option<Session>,
    reported: bool,
}

impl Actor {
    fn runnable(&self) -> bool {
        self.session
            .as_ref()
            .is_some_and(|s| !s.phase().is_terminal() && s.phase() != Phase::Init && s.pending_gate().is_none())
    }

    fn run(mut self, rx: mpsc::Receiver<Job>, tick: Duration) {
        loop {
            let job = if self.runnable() {
                let next = if tick.is_zero() {
                    rx.try_recv().map_err(|e| matches!(e, mpsc::TryRecvError::Disconnected))
                } else {
                    rx.recv_timeout(tick)
                        .map_err(|e| matches!(e, mpsc::RecvTimeoutError::Disconnected))
                };
                match next {
                    Ok(job) => Some(job),
                    Err(true) => return,
                    Err(false) => None,
                }
            } else {
                match rx.recv() {
                    Ok(job) => Some(job),
                    Err(_) => return,
                }
            };
            match job {
                Some(job) => {
                    debug!(session = %self.name, command = job.command.name(), "command");
                    let result = self.handle(job.command);
                    self.publish();
                    let _ = job.reply.send(result);
                }
                None => {
                    if let Some(session) = self.session.as_mut() {
                        session.step();
                    }
                    self.publish();
                }
            }
        }
    }

    fn session(&mut self) -> Result<&mut Session, (ErrorCode, String)> {
        let name = &self.name;
        self.session.as_mut().ok_or_else(|| {
            (
                ErrorCode::UnknownSession,
                format!("session `{name}` has not been started"),
            )
        })
    }

    fn handle(&mut self, command: WireCommand) -> Reply {
        match command {
            WireCommand::StartSession(start) => self.start(start),
            WireCommand::SendMessage { text, target } => {
                let channel = target.map_or(CommandChannel::Group, CommandChannel::Direct);
                let acks = self.session()?.human_command(&text, channel).map_err(refused)?;
                Ok(json!({ "acks": acks }))
            }
            WireCommand::UploadManual { agent, name, text } => {
                if !is_probably_text(text.as_bytes()) {
                    return Err((ErrorCode::InvalidCommand, "manual looks binary".into()));
                }
                let receipt = self.session()?.upload_manual(&agent, &text, &name).map_err(refused)?;
                Ok(json!({ "receipt": receipt, "spec": extract_spec(&text) }))
            }
            WireCommand::AddRobot(entry) => {
                if entry.manual.is_some() {
                    return Err((ErrorCode::InvalidCommand, "upload manuals with upload_manual".into()));
                }
                let id = AgentId::new(entry.id.clone()).map_err(|e| (ErrorCode::InvalidCommand, e.to_string()))?;
                let session = self.session()?;
                session
                    .add_robot(entry.profile(id.clone()), entry.at)
                    .map_err(refused)?;
                Ok(json!({ "robot": id }))
            }
            WireCommand::Decide { decision } => {
                self.session()?.decide(decision).map_err(refused)?;
                Ok(json!({ "decision": decision }))
            }
            WireCommand::Checkpoint => Ok(json!({ "checkpoint": self.session()?.checkpoint() })),
            WireCommand::Introspect => {
                let s = self.session()?;
                let room = &s.state().room;
                let contexts: BTreeMap<&AgentId, &[u64]> =
                    room.roster().iter().map(|a| (a, room.context_of(a))).collect();
                let displays: BTreeMap<&AgentId, &[u64]> =
                    room.roster().iter().map(|a| (a, room.display_of(a))).collect();
                Ok(json!({
                    "phase": s.phase(),
                    "step_count": s.state().step_count,
                    "decisions": s.state().decisions,
                    "last_seq": s.log().last_seq(),
                    "pending_gate": s.pending_gate(),
                    "contexts": contexts,
                    "displays": displays,
                    "assistant_context": room.assistant_context(),
                }))
            }
            WireCommand::Subscribe { .. } | WireCommand::Unsubscribe => {
                unreachable!("subscriptions are handled by the connection")
            }
        }
    }

    fn start(&mut self, start: StartSession) -> Reply {
        let session = match (start.scenario, self.session.as_mut()) {
            (Some(_), Some(_)) => {
                return Err((
                    ErrorCode::SessionExists,
                    format!("session `{}` already exists", self.name),
                ));
            }
            (None, None) => {
                return Err((ErrorCode::InvalidCommand, "start_session needs a scenario".into()));
            }
            (None, Some(existing)) => {
                existing.start().map_err(refused)?;
                existing
            }
            (Some(source), None) => {
                let scenario = match source {
                    ScenarioSource::Scene(name) => bundled_scene(&name)
                        .ok_or_else(|| (ErrorCode::InvalidCommand, format!("no bundled scene `{name}`")))?,
                    ScenarioSource::Inline(text) => {
                        parse_scenario(&text, &|p| Err(format!("{p}: upload manuals with upload_manual")))
                    }
                }
                .map_err(|e| (ErrorCode::InvalidCommand, e.to_string()))?;
                let mut config = SessionConfig::new(start.mode, start.seed);
                config.decision_policy = start.decisions;
                let mut session = Session::new(config, &scenario).map_err(refused)?;
                if !start.hold {
                    session.start().map_err(refused)?;
                }
                self.session.insert(session)
            }
        };
        Ok(json!({
            "phase": session.phase(),
            "scenario_hash": session.scenario_hash(),
            "roster": session.state().room.roster(),
        }))
    }

    /// Moves new session events into the feed and fans them out.
    fn publish(&mut self) {
        let Some(session) = self.session.as_mut() else { return };
        let events = session.drain_events();
        let finished = session.phase().is_terminal() && !self.reported;
        if events.is_empty() && !finished {
            return;
        }
        let mut feed = lock(&self.feed);
        let mut out = Vec::new();
        for event in events {
            let (kind, seq, payload) = match event {
                SessionEvent::Message(m) => {
                    feed.last_seq = m.seq;
                    (
                        EventKind::of(&m),
                        m.seq,
                        serde_json::to_value(&m).expect("messages serialize"),
                    )
                }
                SessionEvent::PhaseChange { from, to } => {
                    (EventKind::PhaseChange, feed.last_seq, json!({ "from": from, "to": to }))
                }
            };
            out.push((kind, seq, payload));
        }
        if finished {
            self.reported = true;
            let report = session.report();
            let mut brief = serde_json::to_value(&report).expect("reports serialize");
            if let Some(obj) = brief.as_object_mut() {
                obj.remove("log");
            }
            let summary = serde_json::to_value(&session.state().summary).expect("summaries serialize");
            out.push((EventKind::Summary, feed.last_seq, summary));
            out.push((EventKind::Report, feed.last_seq, brief));
        }
        for (kind, seq, payload) in out {
            let event = WireEvent {
                kind,
                session: self.name.clone(),
                event: feed.history.len() as u64 + 1,
                seq,
                payload,
            };
            feed.subscribers
                .retain(|_, tx| tx.send(ServerFrame::Event(event.clone())).is_ok());
            feed.history.push(event);
        }
    }
}

fn refused(err: SessionError) -> (ErrorCode, String) {
    let code = match err {
        SessionError::Config(_)
        | SessionError::Knowledge(_)
        | SessionError::Mention(_)
        | SessionError::UnknownAgent(_) => ErrorCode::InvalidCommand,
        SessionError::NotStarted
        | SessionError::SessionClosed
        | SessionError::NotInInit
        | SessionError::NoPendingDecision
        | SessionError::CorruptCheckpoint(_) => ErrorCode::Rejected,
    };
    (code, err.to_string())
}

fn accept_loop(listener: TcpListener, hub: Arc<Hub>, stop: Arc<AtomicBool>) {
    let next_client = AtomicU64::new(1);
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match stream {
            Ok(stream) => {
                let hub = hub.clone();
                let client = next_client.fetch_add(1, Ordering::Relaxed);
                thread::spawn(move || {
                    if let Err(err) = serve_client(stream, hub, client) {
                        debug!(client, %err, "client connection ended");
                    }
                });
            }
            Err(err) => warn!(%err, "accept failed"),
        }
    }
}

fn serve_client(stream: TcpStream, hub: Arc<Hub>, client: u64) -> io::Result<()> {
    let peer = stream.peer_addr()?;
    info!(client, %peer, "client connected");
    let (tx, rx) = mpsc::channel::<ServerFrame>();
    let mut writer = BufWriter::new(stream.try_clone()?);
    let writer = thread::spawn(move || {
        for frame in rx {
            if write_frame(&mut writer, frame.to_json().as_bytes()).is_err() {
                break;
            }
        }
    });
    let mut reader = BufReader::new(stream);
    let mut greeted = false;
    let mut subscriptions: BTreeSet<String> = BTreeSet::new();
    let send = |frame: ServerFrame| {
        let _ = tx.send(frame);
    };
    loop {
        let body = match read_frame(&mut reader) {
            Ok(body) => body,
            Err(FrameError::TooLarge(n)) => {
                send(ServerFrame::error(
                    None,
                    ErrorCode::FrameTooLarge,
                    format!("frame of {n} bytes discarded"),
                    None,
                ));
                continue;
            }
            Err(_) => break,
        };
        if !greeted {
            match serde_json::from_slice::<Hello>(&body) {
                Ok(hello) if hello.kind == "hello" && hello.version == PROTOCOL_VERSION => {
                    greeted = true;
                    send(ServerFrame::Hello {
                        version: PROTOCOL_VERSION,
                        server: format!("fleet-gateway/{}", env!("CARGO_PKG_VERSION")),
                    });
                }
                Ok(hello) if hello.kind == "hello" => send(ServerFrame::error(
                    None,
                    ErrorCode::UnsupportedVersion,
                    format!(
                        "protocol version {} is not supported; use {PROTOCOL_VERSION}",
                        hello.version
                    ),
                    Some(&body),
                )),
                _ => send(ServerFrame::error(
                    None,
                    ErrorCode::HandshakeRequired,
                    "send a hello frame first",
                    Some(&body),
                )),
            }
            continue;
        }
        let frame = match CommandFrame::parse(&body) {
            Ok(frame) => frame,
            Err((id, code, message)) => {
                send(ServerFrame::error(id, code, message, Some(&body)));
                continue;
            }
        };
        let CommandFrame { id, session, command } = frame;
        let reply = match command {
            WireCommand::Subscribe { after } => {
                let slot = hub.get_or_create(&session);
                let mut feed = lock(&slot.feed);
                let after = after.unwrap_or(0);
                for event in feed.history.iter().filter(|e| e.event > after) {
                    send(ServerFrame::Event(event.clone()));
                }
                feed.subscribers.insert(client, tx.clone());
                subscriptions.insert(session.clone());
                Ok(json!({ "last_event": feed.history.len() }))
            }
            WireCommand::Unsubscribe => {
                if let Some(slot) = hub.get(&session) {
                    lock(&slot.feed).subscribers.remove(&client);
                }
                subscriptions.remove(&session);
                Ok(json!({}))
            }
            WireCommand::StartSession(_) => hub.get_or_create(&session).submit(command),
            command => match hub.get(&session) {
                Some(slot) => slot.submit(command),
                None => Err((ErrorCode::UnknownSession, format!("no session `{session}`"))),
            },
        };
        send(match reply {
            Ok(payload) => ServerFrame::Ack { id, session, payload },
            Err((code, message)) => ServerFrame::error(Some(id), code, message, None),
        });
    }
    for name in subscriptions {
        if let Some(slot) = hub.get(&name) {
            lock(&slot.feed).subscribers.remove(&client);
        }
    }
    drop(tx);
    let _ = writer.join();
    info!(client, "client disconnected");
    Ok(())
}
