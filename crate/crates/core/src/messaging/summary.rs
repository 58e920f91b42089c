use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MessageKind, MessageLog};
use crate::ids::{AgentId, TaskId};
use crate::planner::{TaskState, Verdict};
use crate::robot::Health;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub task: TaskId,
    pub agent: Option<AgentId>,
    pub status: TaskState,
}

/// Compressed task history used for replanning instead of the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionSummary {
    /// One entry per task id, ordered by task id.
    pub assignments: Vec<SummaryEntry>,
    pub digest: String,
    pub as_of_seq: u64,
}

impl SessionSummary {
    pub fn entry(&self, task: &TaskId) -> Option<&SummaryEntry> {
        self.assignments.iter().find(|e| &e.task == task)
    }

    /// Tasks the summary lists as held by `agent` and not yet finished.
    pub fn live_tasks_of(&self, agent: &AgentId) -> Vec<&TaskId> {
        self.assignments
            .iter()
            .filter(|e| e.agent.as_ref() == Some(agent) && !e.status.is_terminal())
            .map(|e| &e.task)
            .collect()
    }
}

struct OpenException {
    seq: u64,
    agent: AgentId,
    task: Option<TaskId>,
    kind: &'static str,
}

/// Deterministic structured extraction over the log. Free text is ignored;
/// only assignment, verdict and status records contribute, and the latest
/// record for a task wins.
pub fn summarize(log: &MessageLog) -> SessionSummary {
    let mut entries: BTreeMap<TaskId, SummaryEntry> = BTreeMap::new();
    let mut open: Vec<OpenException> = Vec::new();

    for msg in log.iter() {
        match &msg.kind {
            MessageKind::TaskAssignment { task, agent } => {
                set(&mut entries, task, Some(agent), TaskState::Assigned);
                open.retain(|e| e.task.as_ref() != Some(task));
            }
            MessageKind::VerificationVerdict { task, agent, verdict } => {
                let state = match verdict {
                    Verdict::Accept => TaskState::Verified,
                    Verdict::Reject { .. } => TaskState::Reassigning,
                };
                set(&mut entries, task, Some(agent), state);
            }
            MessageKind::StatusUpdate {
                agent,
                robot,
                task,
                state,
            } => {
                if let (Some(task), Some(state)) = (task, state) {
                    set(&mut entries, task, agent.as_ref(), *state);
                    if state.is_terminal() {
                        open.retain(|e| e.task.as_ref() != Some(task));
                    }
                }
                if let (Some(agent), Some(robot)) = (agent, robot) {
                    if robot.health == Health::Ok {
                        open.retain(|e| !(e.task.is_none() && &e.agent == agent));
                    }
                }
            }
            MessageKind::Exception { agent, task, exception } => open.push(OpenException {
                seq: msg.seq,
                agent: agent.clone(),
                task: task.clone(),
                kind: exception.as_str(),
            }),
            _ => {}
        }
    }

    let assignments: Vec<SummaryEntry> = entries.into_values().collect();
    SessionSummary {
        digest: digest(&assignments, &open),
        assignments,
        as_of_seq: log.last_seq(),
    }
}

fn set(entries: &mut BTreeMap<TaskId, SummaryEntry>, task: &TaskId, agent: Option<&AgentId>, status: TaskState) {
    let entry = entries.entry(task.clone()).or_insert_with(|| SummaryEntry {
        task: task.clone(),
        agent: None,
        status,
    });
    if let Some(agent) = agent {
        entry.agent = Some(agent.clone());
    }
    entry.status = status;
}

fn digest(entries: &[SummaryEntry], open: &[OpenException]) -> String {
    let done = entries.iter().filter(|e| e.status == TaskState::Done).count();
    let failed = entries.iter().filter(|e| e.status == TaskState::Failed).count();
    let mut out = format!(
        "tasks {} (done {done}, failed {failed}, active {}); unresolved exceptions: ",
        entries.len(),
        entries.len() - done - failed
    );
    if open.is_empty() {
        out.push_str("none");
    }
    for (i, e) in open.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let task = e.task.as_ref().map_or("-", TaskId::as_str);
        let _ = write!(out, "{}/{} {} @{}", e.agent, task, e.kind, e.seq);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messaging::{assignment_line, Channel, ChatMessage, ExceptionKind, Sender};

    fn id(name: &str) -> AgentId {
        AgentId::new(name).unwrap()
    }

    fn task(name: &str) -> TaskId {
        TaskId::new(name).unwrap()
    }

    fn assign(log: &mut MessageLog, t: &str, a: &str) {
        let msg = ChatMessage::new(
            Sender::Assistant,
            Channel::Group,
            MessageKind::TaskAssignment {
                task: task(t),
                agent: id(a),
            },
            assignment_line(&id(a), &task(t)),
        )
        .unwrap();
        log.append(msg);
    }

    #[test]
    fn empty_log() {
        let s = summarize(&MessageLog::new());
        assert!(s.assignments.is_empty());
        assert_eq!(s.as_of_seq, 0);
        assert!(s.digest.ends_with("none"));
    }

    #[test]
    fn reassignment_supersedes() {
        let mut log = MessageLog::new();
        assign(&mut log, "T1", "Rover1");
        log.append(
            ChatMessage::new(
                Sender::Robot(id("Rover1")),
                Channel::Group,
                MessageKind::Exception {
                    agent: id("Rover1"),
                    task: Some(task("T1")),
                    exception: ExceptionKind::TerrainBlock,
                },
                "blocked by debris",
            )
            .unwrap(),
        );
        let mid = summarize(&log);
        assert!(mid.digest.contains("Rover1/T1 terrain_block"));
        assign(&mut log, "T1", "Rover2");
        let s = summarize(&log);
        assert_eq!(
            s.assignments,
            vec![SummaryEntry {
                task: task("T1"),
                agent: Some(id("Rover2")),
                status: TaskState::Assigned,
            }]
        );
        assert_eq!(s.as_of_seq, 3);
        assert!(s.digest.ends_with("none"));
    }

    #[test]
    fn free_text_never_contributes() {
        let mut log = MessageLog::new();
        log.append(
            ChatMessage::new(
                Sender::Human,
                Channel::Group,
                MessageKind::Info,
                "@Rover1 Your task is T9. EOF",
            )
            .unwrap(),
        );
        assert!(summarize(&log).assignments.is_empty());
    }
}
