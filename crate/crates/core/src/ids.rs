//! Identifier newtypes shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mention tokens that can never name an agent.
pub const RESERVED_NAMES: [&str; 2] = ["all", "human"];

const MAX_AGENT_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("identifier is empty")]
    Empty,
    #[error("identifier `{0}` is longer than {MAX_AGENT_ID_LEN} characters")]
    TooLong(String),
    #[error("identifier `{0}` contains whitespace or '@'")]
    InvalidChar(String),
    #[error("identifier `{0}` is reserved")]
    Reserved(String),
}

/// Name of a robot agent. Parses unambiguously after an `@` sigil.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Result<Self, IdError> {
        let name = name.into();
        if name.is_empty() {
            return Err(IdError::Empty);
        }
        if name.chars().count() > MAX_AGENT_ID_LEN {
            return Err(IdError::TooLong(name));
        }
        if name.chars().any(|c| c.is_whitespace() || c == '@') {
            return Err(IdError::InvalidChar(name));
        }
        if RESERVED_NAMES.contains(&name.as_str()) {
            return Err(IdError::Reserved(name));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = IdError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Task identifier. Same lexical rules as [`AgentId`] so it can be embedded
/// in assignment lines without quoting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskId(String);

impl TaskId {
    pub fn new(name: impl Into<String>) -> Result<Self, IdError> {
        let name = name.into();
        if name.is_empty() {
            return Err(IdError::Empty);
        }
        if name.chars().count() > MAX_AGENT_ID_LEN {
            return Err(IdError::TooLong(name));
        }
        if name.chars().any(|c| c.is_whitespace() || c == '@') {
            return Err(IdError::InvalidChar(name));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TaskId {
    type Error = IdError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TaskId> for String {
    fn from(id: TaskId) -> Self {
        id.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Grid cell `(x, y)`; serializes as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell(pub i32, pub i32);

impl Cell {
    pub fn x(self) -> i32 {
        self.0
    }

    pub fn y(self) -> i32 {
        self.1
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        let Cell(x, y) = self;
        [Cell(x + 1, y), Cell(x - 1, y), Cell(x, y + 1), Cell(x, y - 1)]
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.0.abs_diff(other.0) + self.1.abs_diff(other.1)
    }

    pub fn chebyshev(self, other: Cell) -> u32 {
        self.0.abs_diff(other.0).max(self.1.abs_diff(other.1))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_id_rules() {
        assert!(AgentId::new("Rover1").is_ok());
        assert_eq!(AgentId::new(""), Err(IdError::Empty));
        assert!(matches!(AgentId::new("a b"), Err(IdError::InvalidChar(_))));
        assert!(matches!(AgentId::new("a@b"), Err(IdError::InvalidChar(_))));
        assert!(matches!(AgentId::new("all"), Err(IdError::Reserved(_))));
        assert!(matches!(AgentId::new("x".repeat(65)), Err(IdError::TooLong(_))));
        assert!(AgentId::new("x".repeat(64)).is_ok());
    }

    #[test]
    fn agent_id_serde_validates() {
        let ok: AgentId = serde_json::from_str("\"Dog1\"").unwrap();
        assert_eq!(ok.as_str(), "Dog1");
        assert!(serde_json::from_str::<AgentId>("\"bad name\"").is_err());
    }
}
