//! Frame layout and the records carried in frames.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON holding exactly one record.

use std::io::{self, Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ids::{AgentId, Cell};
use crate::messaging::{ChatMessage, Decision, MessageKind};
use crate::session::{DecisionPolicy, Mode};
use crate::world::RobotEntry;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest frame either side accepts.
pub const MAX_FRAME_BYTES: usize = 2 * 1024 * 1024;
/// Cap on an inline manual in `upload_manual`.
pub const MAX_MANUAL_BYTES: usize = 1024 * 1024;
/// How much of an offending frame an error echoes back.
pub const ECHO_LIMIT: usize = 256;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("connection closed")]
    Closed,
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES}-byte limit")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_frame<W: Write>(out: &mut W, body: &[u8]) -> Result<(), FrameError> {
    if body.len() > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(body.len()));
    }
    out.write_all(&(body.len() as u32).to_be_bytes())?;
    out.write_all(body)?;
    out.flush()?;
    Ok(())
}

/// Reads one frame. An oversized frame is consumed and discarded so the
/// stream stays aligned, then reported as [`FrameError::TooLarge`].
pub fn read_frame<R: Read>(input: &mut R) -> Result<Vec<u8>, FrameError> {
    let mut len = [0u8; 4];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(FrameError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        io::copy(&mut input.take(len as u64), &mut io::sink())?;
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0; len];
    input.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Closed,
        _ => e.into(),
    })?;
    Ok(body)
}

/// First frame a client sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(rename = "type")]
    pub kind: String,
    pub version: u32,
}

impl Hello {
    pub fn new() -> Self {
        Self {
            kind: "hello".into(),
            version: PROTOCOL_VERSION,
        }
    }
}

impl Default for Hello {
    fn default() -> Self {
        Self::new()
    }
}

/// Where a session's scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// A bundled scene by name.
    Scene(String),
    /// Scenario TOML text. Manual references are not resolved; upload
    /// manuals with `upload_manual` instead.
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSession {
    /// Absent when starting a session created earlier with `hold`.
    #[serde(default)]
    pub scenario: Option<ScenarioSource>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub decisions: DecisionPolicy,
    /// Stay in Init so robots can be added; a later `start_session` without
    /// a scenario starts the run.
    #[serde(default)]
    pub hold: bool,
}

fn default_mode() -> Mode {
    Mode::Full
}

fn default_seed() -> u64 {
    1
}

fn default_policy() -> DecisionPolicy {
    DecisionPolicy::Interactive
}

/// A client request. The envelope carries `id` and `session` beside these
/// fields: `{"id": 3, "session": "s1", "type": "decide", "payload": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireCommand {
    StartSession(StartSession),
    /// Group message unless `target` names a robot.
    SendMessage {
        text: String,
        #[serde(default)]
        target: Option<AgentId>,
    },
    UploadManual {
        agent: AgentId,
        name: String,
        text: String,
    },
    AddRobot(RobotEntry),
    Decide {
        decision: Decision,
    },
    Checkpoint,
    /// Replays retained events with `event > after`, then streams live ones.
    Subscribe {
        #[serde(default)]
        after: Option<u64>,
    },
    Unsubscribe,
    /// Routing and gate state for inspection.
    Introspect,
}

impl WireCommand {
    pub fn name(&self) -> &'static str {
        match self {
            WireCommand::StartSession(_) => "start_session",
            WireCommand::SendMessage { .. } => "send_message",
            WireCommand::UploadManual { .. } => "upload_manual",
            WireCommand::AddRobot(_) => "add_robot",
            WireCommand::Decide { .. } => "decide",
            WireCommand::Checkpoint => "checkpoint",
            WireCommand::Subscribe { .. } => "subscribe",
            WireCommand::Unsubscribe => "unsubscribe",
            WireCommand::Introspect => "introspect",
        }
    }

    /// Checks that need no session.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            WireCommand::UploadManual { text, .. } if text.len() > MAX_MANUAL_BYTES => Err(format!(
                "manual is {} bytes; the limit is {MAX_MANUAL_BYTES}",
                text.len()
            )),
            WireCommand::SendMessage { text, .. } if text.trim().is_empty() => Err("empty message".into()),
            _ => Ok(()),
        }
    }
}

/// A command with its envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandFrame {
    pub id: u64,
    pub session: String,
    pub command: WireCommand,
}

impl CommandFrame {
    pub fn new(id: u64, session: impl Into<String>, command: WireCommand) -> Self {
        Self {
            id,
            session: session.into(),
            command,
        }
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(&self.command).expect("commands serialize");
        let obj = value.as_object_mut().expect("adjacently tagged");
        obj.insert("id".into(), json!(self.id));
        obj.insert("session".into(), json!(self.session));
        value.to_string()
    }

    /// Parses a client frame body. On failure returns the frame id when one
    /// could be read, for the error reply.
    pub fn parse(body: &[u8]) -> Result<Self, (Option<u64>, ErrorCode, String)> {
        let mut value: Value = serde_json::from_slice(body)
            .map_err(|e| (None, ErrorCode::MalformedFrame, format!("not a JSON record: {e}")))?;
        let Some(obj) = value.as_object_mut() else {
            return Err((None, ErrorCode::MalformedFrame, "frame must be a JSON object".into()));
        };
        let id = match obj.remove("id") {
            Some(Value::Number(n)) if n.is_u64() => n.as_u64(),
            _ => return Err((None, ErrorCode::MalformedFrame, "missing or invalid frame id".into())),
        };
        let session = match obj.remove("session") {
            Some(Value::String(s)) if valid_session_id(&s) => s,
            _ => return Err((id, ErrorCode::MalformedFrame, "missing or invalid session id".into())),
        };
        let command: WireCommand =
            serde_json::from_value(value).map_err(|e| (id, ErrorCode::InvalidCommand, e.to_string()))?;
        command.validate().map_err(|e| (id, ErrorCode::InvalidCommand, e))?;
        Ok(Self {
            id: id.expect("checked above"),
            session,
            command,
        })
    }
}

/// Session ids: 1–64 characters from `[A-Za-z0-9_.-]`.
pub fn valid_session_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    HandshakeRequired,
    UnsupportedVersion,
    MalformedFrame,
    FrameTooLarge,
    InvalidCommand,
    UnknownSession,
    SessionExists,
    /// The session refused the command (wrong phase, no pending gate, ...).
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Message,
    Status,
    Assignment,
    Exception,
    DecisionRequest,
    Summary,
    PhaseChange,
    Report,
}

impl EventKind {
    /// Event type of a logged message.
    pub fn of(msg: &ChatMessage) -> Self {
        match msg.kind {
            MessageKind::TaskAssignment { .. } => EventKind::Assignment,
            MessageKind::StatusUpdate { .. } => EventKind::Status,
            MessageKind::Exception { .. } => EventKind::Exception,
            MessageKind::DecisionRequest { .. } => EventKind::DecisionRequest,
            _ => EventKind::Message,
        }
    }

    /// Whether the payload is a logged [`ChatMessage`].
    pub fn carries_message(self) -> bool {
        matches!(
            self,
            EventKind::Message
                | EventKind::Status
                | EventKind::Assignment
                | EventKind::Exception
                | EventKind::DecisionRequest
        )
    }
}

/// One session event as delivered to subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEvent {
    #[serde(rename = "type")]
    pub kind: EventKind,
    pub session: String,
    /// Per-session event counter, from 1; used to resume a subscription.
    pub event: u64,
    /// Log seq of the carried message; for other events the last log seq
    /// at the time they were raised.
    pub seq: u64,
    pub payload: Value,
}

impl WireEvent {
    pub fn message(&self) -> Option<ChatMessage> {
        self.kind
            .carries_message()
            .then(|| serde_json::from_value(self.payload.clone()).ok())
            .flatten()
    }
}

/// Everything the server sends.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerFrame {
    Hello {
        version: u32,
        server: String,
    },
    /// Successful command; `payload` depends on the command.
    Ack {
        id: u64,
        session: String,
        payload: Value,
    },
    Error {
        id: Option<u64>,
        code: ErrorCode,
        message: String,
        /// Start of the offending frame.
        echo: Option<String>,
    },
    Event(WireEvent),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Control {
    Hello {
        version: u32,
        server: String,
    },
    Ack {
        id: u64,
        session: String,
        payload: Value,
    },
    Error {
        id: Option<u64>,
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        echo: Option<String>,
    },
}

impl Serialize for ServerFrame {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.clone() {
            ServerFrame::Hello { version, server } => Control::Hello { version, server }.serialize(s),
            ServerFrame::Ack { id, session, payload } => Control::Ack { id, session, payload }.serialize(s),
            ServerFrame::Error {
                id,
                code,
                message,
                echo,
            } => Control::Error {
                id,
                code,
                message,
                echo,
            }
            .serialize(s),
            ServerFrame::Event(e) => e.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ServerFrame {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let value = Value::deserialize(d)?;
        let control = matches!(
            value.get("type").and_then(Value::as_str),
            Some("hello" | "ack" | "error")
        );
        if control {
            Ok(match Control::deserialize(value).map_err(D::Error::custom)? {
                Control::Hello { version, server } => ServerFrame::Hello { version, server },
                Control::Ack { id, session, payload } => ServerFrame::Ack { id, session, payload },
                Control::Error {
                    id,
                    code,
                    message,
                    echo,
                } => ServerFrame::Error {
                    id,
                    code,
                    message,
                    echo,
                },
            })
        } else {
            WireEvent::deserialize(value)
                .map(ServerFrame::Event)
                .map_err(D::Error::custom)
        }
    }
}

impl ServerFrame {
    pub fn error(id: Option<u64>, code: ErrorCode, message: impl Into<String>, frame: Option<&[u8]>) -> Self {
        ServerFrame::Error {
            id,
            code,
            message: message.into(),
            echo: frame.map(|f| {
                let text = String::from_utf8_lossy(f);
                text.chars().take(ECHO_LIMIT).collect()
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }
}

/// `add_robot` payload helper for clients.
pub fn robot_entry(id: &str, kind: crate::robot::RobotKind, at: Cell, capabilities: &[&str]) -> RobotEntry {
    RobotEntry {
        id: id.to_string(),
        kind,
        at,
        height_m: 0.5,
        width_m: 0.5,
        max_speed: 1,
        battery_capacity: 100,
        battery_pct: 100.0,
        capabilities: capabilities.iter().map(|c| c.to_string()).collect(),
        traversable: vec![crate::robot::TerrainKind::Flat],
        manual: None,
    }
}
