//! Planner backends other than the built-in rule-based allocator.
//!
//! A backend receives a [`BackendRequest`] — tasks, robot briefs, the
//! session summary and the last human decision, never the transcript — and
//! answers with JSON of the form
//!
//! ```json
//! {"assignments": [{"task": "find_apples", "agent": "Rover1", "rationale": "closest"}]}
//! ```
//!
//! Every answer passes through [`validate_backend_output`] before use.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ids::{AgentId, Cell, TaskId};
use crate::messaging::{Decision, SessionSummary};
use crate::robot::RobotKind;

pub const BACKEND_SCHEMA: &str = "fleet-planner/1";
/// Environment variable holding the remote backend credential. Its value is
/// handed to the child process and never written anywhere else.
pub const CREDENTIAL_ENV: &str = "FLEET_PLANNER_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBrief {
    pub id: TaskId,
    pub description: String,
    pub requires: Vec<String>,
    pub goals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotBrief {
    pub id: AgentId,
    pub kind: RobotKind,
    pub capabilities: Vec<String>,
    pub battery_pct: f64,
    pub position: Cell,
    pub busy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub schema: String,
    pub tasks: Vec<TaskBrief>,
    pub robots: Vec<RobotBrief>,
    pub summary: SessionSummary,
    pub last_decision: Option<Decision>,
    pub excluded: Vec<(TaskId, AgentId)>,
    /// Operator instructions posted to the group since the session began.
    #[serde(default)]
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedAssignment {
    pub task: TaskId,
    pub agent: AgentId,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport failed: {0}")]
    Transport(String),
    #[error("recorded responses exhausted")]
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("backend output rejected: {}", .violations.join("; "))]
pub struct BackendViolation {
    pub violations: Vec<String>,
}

pub trait PlannerBackend {
    fn name(&self) -> &'static str;
    fn propose_allocation(&mut self, request: &BackendRequest) -> Result<Value, BackendError>;
}

/// Replays captured responses in order.
#[derive(Debug, Clone)]
pub struct RecordedBackend {
    responses: Vec<Value>,
    pub cursor: usize,
}

impl RecordedBackend {
    pub fn new(responses: Vec<Value>) -> Self {
        Self { responses, cursor: 0 }
    }

    /// One JSON document per non-empty line.
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let responses = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self::new(responses))
    }
}

impl PlannerBackend for RecordedBackend {
    fn name(&self) -> &'static str {
        "recorded"
    }

    fn propose_allocation(&mut self, _request: &BackendRequest) -> Result<Value, BackendError> {
        let out = self
            .responses
            .get(self.cursor)
            .cloned()
            .ok_or(BackendError::Exhausted)?;
        self.cursor += 1;
        Ok(out)
    }
}

/// Pipes each request as one JSON document to a child process's stdin and
/// reads one JSON document from its stdout. The child inherits
/// [`CREDENTIAL_ENV`] from this process.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub program: String,
    pub args: Vec<String>,
}

impl PlannerBackend for CommandBackend {
    fn name(&self) -> &'static str {
        "external"
    }

    fn propose_allocation(&mut self, request: &BackendRequest) -> Result<Value, BackendError> {
        let transport = |e: std::io::Error| BackendError::Transport(e.to_string());
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(transport)?;
        let payload = serde_json::to_vec(request).map_err(|e| BackendError::Transport(e.to_string()))?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(&payload)
            .map_err(transport)?;
        let output = child.wait_with_output().map_err(transport)?;
        if !output.status.success() {
            return Err(BackendError::Transport(format!(
                "backend exited with {}",
                output.status
            )));
        }
        serde_json::from_slice(&output.stdout).map_err(|e| BackendError::Transport(e.to_string()))
    }
}

/// Accepts a proposal only if every entry names a roster agent and a known
/// task, carries both fields, and no task or agent appears twice.
pub fn validate_backend_output(
    raw: &Value,
    roster: &[AgentId],
    tasks: &[TaskId],
) -> Result<Vec<ProposedAssignment>, BackendViolation> {
    let mut violations = Vec::new();
    let Some(entries) = raw.get("assignments").and_then(Value::as_array) else {
        return Err(BackendViolation {
            violations: vec!["missing `assignments` array".into()],
        });
    };
    let mut out = Vec::new();
    let mut seen_tasks = BTreeSet::new();
    let mut seen_agents = BTreeSet::new();
    for (i, entry) in entries.iter().enumerate() {
        let field = |name: &str| entry.get(name).and_then(Value::as_str);
        let (Some(task), Some(agent)) = (field("task"), field("agent")) else {
            violations.push(format!("entry {i}: `task` and `agent` are required"));
            continue;
        };
        let known_task = tasks.iter().find(|t| t.as_str() == task);
        let known_agent = roster.iter().find(|a| a.as_str() == agent);
        match (known_task, known_agent) {
            (None, _) => violations.push(format!("entry {i}: unknown task `{task}`")),
            (_, None) => violations.push(format!("entry {i}: unknown agent `{agent}`")),
            (Some(t), Some(a)) => {
                if !seen_tasks.insert(t.clone()) {
                    violations.push(format!("entry {i}: task `{t}` assigned twice"));
                } else if !seen_agents.insert(a.clone()) {
                    violations.push(format!("entry {i}: agent `{a}` given two tasks"));
                } else {
                    out.push(ProposedAssignment {
                        task: t.clone(),
                        agent: a.clone(),
                        rationale: field("rationale").unwrap_or_default().to_string(),
                    });
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(BackendViolation { violations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ids() -> (Vec<AgentId>, Vec<TaskId>) {
        (
            vec![AgentId::new("Rover1").unwrap(), AgentId::new("Dog1").unwrap()],
            vec![TaskId::new("T1").unwrap(), TaskId::new("T2").unwrap()],
        )
    }

    #[test]
    fn ghost_robot_rejected() {
        let (r, t) = ids();
        let err =
            validate_backend_output(&json!({"assignments": [{"task": "T1", "agent": "RoverX"}]}), &r, &t).unwrap_err();
        assert!(err.violations[0].contains("RoverX"));
    }

    #[test]
    fn duplicate_task_rejected() {
        let (r, t) = ids();
        let raw = json!({"assignments": [
            {"task": "T1", "agent": "Rover1"},
            {"task": "T1", "agent": "Dog1"}
        ]});
        assert!(validate_backend_output(&raw, &r, &t).is_err());
    }

    #[test]
    fn missing_fields_rejected() {
        let (r, t) = ids();
        assert!(validate_backend_output(&json!({"assignments": [{"task": "T1"}]}), &r, &t).is_err());
        assert!(validate_backend_output(&json!({"plan": []}), &r, &t).is_err());
    }

    #[test]
    fn well_formed_passes_unchanged() {
        let (r, t) = ids();
        let raw = json!({"assignments": [
            {"task": "T1", "agent": "Rover1", "rationale": "closest"},
            {"task": "T2", "agent": "Dog1", "rationale": "can jump"}
        ]});
        let out = validate_backend_output(&raw, &r, &t).unwrap();
        assert_eq!(serde_json::to_value(json!({"assignments": out})).unwrap(), raw);
    }

    #[test]
    fn recorded_backend_replays_in_order() {
        let mut b = RecordedBackend::from_jsonl("{\"assignments\": []}\n\n{\"x\": 1}\n").unwrap();
        let req = BackendRequest {
            schema: BACKEND_SCHEMA.into(),
            tasks: vec![],
            robots: vec![],
            summary: SessionSummary::default(),
            last_decision: None,
            excluded: vec![],
            instructions: vec![],
        };
        assert_eq!(b.propose_allocation(&req).unwrap(), json!({"assignments": []}));
        assert_eq!(b.propose_allocation(&req).unwrap(), json!({"x": 1}));
        assert!(matches!(b.propose_allocation(&req), Err(BackendError::Exhausted)));
    }
}
