use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChatMessage;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: expected seq {expected}, found {found}")]
    Sequence { line: usize, expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Append-only ordered message log. Entries are never mutated after append.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageLog {
    entries: Vec<ChatMessage>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `msg` with the next sequence number (1 for an empty log).
    pub fn append(&mut self, mut msg: ChatMessage) -> u64 {
        let seq = self.last_seq() + 1;
        msg.seq = seq;
        self.entries.push(msg);
        seq
    }

    pub fn last_seq(&self) -> u64 {
        self.entries.last().map_or(0, |m| m.seq)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ChatMessage] {
        &self.entries
    }

    pub fn get(&self, seq: u64) -> Option<&ChatMessage> {
        let idx = usize::try_from(seq.checked_sub(1)?).ok()?;
        self.entries.get(idx)
    }

    /// Messages with `seq > after`.
    pub fn since(&self, after: u64) -> &[ChatMessage] {
        let start = usize::try_from(after).unwrap_or(usize::MAX).min(self.entries.len());
        &self.entries[start..]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChatMessage> {
        self.entries.iter()
    }

    /// One JSON record per line.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for msg in &self.entries {
            serde_json::to_writer(&mut out, msg)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Reads a log written by [`MessageLog::write_ndjson`]; sequence numbers
    /// must run 1..N without gaps.
    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, LogError> {
        let mut log = MessageLog::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let msg: ChatMessage =
                serde_json::from_str(&line).map_err(|source| LogError::Parse { line: idx + 1, source })?;
            let expected = log.last_seq() + 1;
            if msg.seq != expected {
                return Err(LogError::Sequence {
                    line: idx + 1,
                    expected,
                    found: msg.seq,
                });
            }
            log.entries.push(msg);
        }
        Ok(log)
    }

    pub fn from_ndjson(text: &str) -> Result<Self, LogError> {
        Self::read_ndjson(text.as_bytes())
    }
}
