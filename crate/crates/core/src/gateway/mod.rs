//! Framed TCP gateway for operator consoles.
//!
//! Clients open a connection, send a hello frame, then issue commands
//! against named sessions. Each session is owned by one thread that applies
//! commands in arrival order; its events are numbered, retained and fanned
//! out to every subscriber, so a reconnecting client can replay from the
//! last event it saw.

mod client;
mod protocol;
mod server;

pub use self::client::{Client, ClientError};
pub use self::protocol::{
    read_frame, robot_entry, valid_session_id, write_frame, CommandFrame, ErrorCode, EventKind, FrameError, Hello,
    ScenarioSource, ServerFrame, StartSession, WireCommand, WireEvent, ECHO_LIMIT, MAX_FRAME_BYTES, MAX_MANUAL_BYTES,
    PROTOCOL_VERSION,
};
pub use self::server::{Gateway, GatewayConfig, GatewayError};
