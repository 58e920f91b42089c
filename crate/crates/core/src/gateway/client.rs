use std::collections::VecDeque;
use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::protocol::{
    read_frame, write_frame, CommandFrame, ErrorCode, FrameError, Hello, ServerFrame, WireCommand, WireEvent,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("{code:?}: {message}")]
    Rejected { code: ErrorCode, message: String },
    #[error("undecodable server frame: {0}")]
    Decode(#[from] serde_json::Error),
}

/// Blocking client used by tests and tools. Events that arrive while
/// waiting for an acknowledgement are buffered, never dropped.
#[derive(Debug)]
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
    events: VecDeque<WireEvent>,
    errors: VecDeque<ServerFrame>,
}

impl Client {
    /// Connects and performs the hello handshake.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(FrameError::from)?;
        stream
            .set_read_timeout(Some(Duration::from_secs(20)))
            .map_err(FrameError::from)?;
        let mut client = Self {
            writer: BufWriter::new(stream.try_clone().map_err(FrameError::from)?),
            reader: BufReader::new(stream),
            next_id: 1,
            events: VecDeque::new(),
            errors: VecDeque::new(),
        };
        client.send_raw(serde_json::to_string(&Hello::new())?.as_bytes())?;
        match client.recv()? {
            ServerFrame::Hello { .. } => Ok(client),
            other => Err(ClientError::Handshake(other.to_json())),
        }
    }

    /// Writes one frame as is.
    pub fn send_raw(&mut self, body: &[u8]) -> Result<(), ClientError> {
        Ok(write_frame(&mut self.writer, body)?)
    }

    /// Reads the next frame from the wire.
    pub fn recv(&mut self) -> Result<ServerFrame, ClientError> {
        let body = read_frame(&mut self.reader)?;
        Ok(serde_json::from_slice(&body)?)
    }

    /// Sends a command and returns its frame id without waiting.
    pub fn send(&mut self, session: &str, command: WireCommand) -> Result<u64, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        self.send_raw(CommandFrame::new(id, session, command).to_json().as_bytes())?;
        Ok(id)
    }

    /// Sends a command and waits for its acknowledgement payload.
    pub fn request(&mut self, session: &str, command: WireCommand) -> Result<Value, ClientError> {
        let id = self.send(session, command)?;
        self.await_reply(id)
    }

    /// Waits for the ack or error answering frame `id`.
    pub fn await_reply(&mut self, id: u64) -> Result<Value, ClientError> {
        loop {
            match self.recv()? {
                ServerFrame::Ack { id: got, payload, .. } if got == id => return Ok(payload),
                ServerFrame::Error {
                    id: Some(got),
                    code,
                    message,
                    ..
                } if got == id => return Err(ClientError::Rejected { code, message }),
                ServerFrame::Event(e) => self.events.push_back(e),
                other => self.errors.push_back(other),
            }
        }
    }

    /// Next event, buffered or from the wire.
    pub fn next_event(&mut self) -> Result<WireEvent, ClientError> {
        if let Some(e) = self.events.pop_front() {
            return Ok(e);
        }
        loop {
            match self.recv()? {
                ServerFrame::Event(e) => return Ok(e),
                other => self.errors.push_back(other),
            }
        }
    }

    /// Collects events up to and including the first matching `stop`.
    pub fn events_until(&mut self, stop: impl Fn(&WireEvent) -> bool) -> Result<Vec<WireEvent>, ClientError> {
        let mut out = Vec::new();
        loop {
            let e = self.next_event()?;
            let done = stop(&e);
            out.push(e);
            if done {
                return Ok(out);
            }
        }
    }

    /// Non-event frames that arrived while waiting for something else.
    pub fn take_unmatched(&mut self) -> Vec<ServerFrame> {
        self.errors.drain(..).collect()
    }
}
