//! The assistant's allocator, the per-robot verifier and the pluggable
//! planner backends.

mod allocate;
mod backend;
mod plan;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::allocate::{
    allocate, assign_min_cost, estimate_cost, Allocation, AllocationInput, CostMatrix, EXHAUSTIVE_LIMIT,
};
pub use self::backend::{
    validate_backend_output, BackendError, BackendRequest, BackendViolation, CommandBackend, PlannerBackend,
    ProposedAssignment, RecordedBackend, RobotBrief, TaskBrief, BACKEND_SCHEMA, CREDENTIAL_ENV,
};
pub use self::plan::{plan_task, reveal_evidence, usable_energy, verify, TaskPlan};

use crate::ids::{AgentId, TaskId};
use crate::robot::CapabilityTag;
use crate::world::Predicate;

/// Task lifecycle.
///
/// ```text
/// Pending ─► Assigned ─► Verified ─► Executing ─► Done | Failed | Reassigning
///                │                      ▲
///                └──── (no verify) ─────┘            Reassigning ─► Assigned
/// ```
///
/// Additionally a task may be rejected before it executes (Assigned or
/// Verified → Reassigning), marked Failed while waiting for an agent, and
/// marked Done before assignment when its goals already hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Assigned,
    Verified,
    Executing,
    Done,
    Failed,
    Reassigning,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }

    pub fn can_transition(self, to: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, to),
            (Pending, Assigned | Failed | Done)
                | (Assigned, Verified | Executing | Reassigning)
                | (Verified, Executing | Reassigning)
                | (Executing, Done | Failed | Reassigning)
                | (Reassigning, Assigned | Failed | Done)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Assigned => "assigned",
            TaskState::Verified => "verified",
            TaskState::Executing => "executing",
            TaskState::Done => "done",
            TaskState::Failed => "failed",
            TaskState::Reassigning => "reassigning",
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal task transition {from} -> {to}")]
pub struct TransitionError {
    pub from: TaskState,
    pub to: TaskState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub description: String,
    pub required_capabilities: BTreeSet<CapabilityTag>,
    pub goals: Vec<Predicate>,
    pub state: TaskState,
}

impl TaskSpec {
    pub fn transition(&mut self, to: TaskState) -> Result<(), TransitionError> {
        if self.state.can_transition(to) {
            self.state = to;
            Ok(())
        } else {
            Err(TransitionError { from: self.state, to })
        }
    }

    /// Capabilities the goals need regardless of what the task declares.
    pub fn implied_capabilities(&self) -> BTreeSet<CapabilityTag> {
        self.goals
            .iter()
            .filter_map(|g| match g {
                Predicate::Found { .. } => Some(CapabilityTag::CAMERA),
                Predicate::ObjectAt { .. } => Some(CapabilityTag::GRASP),
                Predicate::DoorOpen { .. } => Some(CapabilityTag::OPEN_DOOR),
                Predicate::RobotAt { .. } => None,
            })
            .map(CapabilityTag::new)
            .collect()
    }

    /// Doors this task will open once done.
    pub fn doors_opened(&self) -> impl Iterator<Item = crate::ids::Cell> + '_ {
        self.goals.iter().filter_map(|g| match g {
            Predicate::DoorOpen { cell } => Some(*cell),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: TaskId,
    pub agent: AgentId,
    pub rationale: String,
    /// Log seq of the assignment message.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingCapability,
    NoTraversablePath,
    InsufficientBattery,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MissingCapability => "missing capability",
            RejectReason::NoTraversablePath => "no traversable path",
            RejectReason::InsufficientBattery => "insufficient battery",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject { reason: RejectReason },
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub task: TaskId,
    pub agent: AgentId,
    pub verdict: Verdict,
}
