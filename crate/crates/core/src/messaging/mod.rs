//! Chat messages, channels and `@`-mention routing.
//!
//! Every coordination step in a session is a [`ChatMessage`] appended to the
//! session's [`MessageLog`]. The log is the single source of truth: routing
//! decides which agents *see* a message and which agents *process* it, and
//! [`summarize`] compresses the structured records into the
//! `(task, agent, status)` history used for replanning.

mod log;
mod mention;
mod routing;
mod summary;

use serde::{Deserialize, Serialize};

pub use self::log::{LogError, MessageLog};
pub use self::mention::{assignment_line, parse_assignment, parse_mentions, MentionError};
pub use self::routing::{route, ChatRoom, DeliveryPlan, RoutingError};
pub use self::summary::{summarize, SessionSummary, SummaryEntry};

use crate::ids::{AgentId, TaskId};
use crate::planner::{TaskState, Verdict};
use crate::robot::{ActionCommand, RobotStatus};

/// Target of an `@` token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mention {
    Agent(AgentId),
    /// `@all`
    Broadcast,
    /// `@human`, used by gate requests.
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sender {
    Human,
    Assistant,
    Robot(AgentId),
}

/// Non-robot end of a one-on-one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectPeer {
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Group,
    Direct { peer: DirectPeer, target: AgentId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceptionKind {
    TerrainBlock,
    LowBattery,
    Fault,
    Unreachable,
    InfeasibleAction,
    BatteryInsufficient,
}

impl ExceptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExceptionKind::TerrainBlock => "terrain_block",
            ExceptionKind::LowBattery => "low_battery",
            ExceptionKind::Fault => "fault",
            ExceptionKind::Unreachable => "unreachable",
            ExceptionKind::InfeasibleAction => "infeasible_action",
            ExceptionKind::BatteryInsufficient => "battery_insufficient",
        }
    }

    /// True for exceptions caused by a dispatched action that could not run.
    pub fn is_action_failure(self) -> bool {
        matches!(
            self,
            ExceptionKind::Unreachable | ExceptionKind::InfeasibleAction | ExceptionKind::BatteryInsufficient
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Yes,
    No,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Yes => "yes",
            Decision::No => "no",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(Decision::Yes),
            "no" => Some(Decision::No),
            _ => None,
        }
    }
}

/// Structured kind of a message. The summary and every audit are computed
/// from these records, never from `body` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessageKind {
    TaskAssignment {
        task: TaskId,
        agent: AgentId,
    },
    VerificationVerdict {
        task: TaskId,
        agent: AgentId,
        verdict: Verdict,
    },
    Exception {
        agent: AgentId,
        task: Option<TaskId>,
        exception: ExceptionKind,
    },
    StatusUpdate {
        agent: Option<AgentId>,
        robot: Option<RobotStatus>,
        task: Option<TaskId>,
        state: Option<TaskState>,
    },
    /// One dispatched high-level robot action (counts as a step).
    Action {
        agent: AgentId,
        task: Option<TaskId>,
        action: ActionCommand,
    },
    HumanCommand,
    DecisionRequest {
        task: Option<TaskId>,
        agent: Option<AgentId>,
    },
    HumanDecision {
        decision: Decision,
    },
    Info,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    TaskAssignment,
    VerificationVerdict,
    Exception,
    StatusUpdate,
    Action,
    HumanCommand,
    DecisionRequest,
    HumanDecision,
    Info,
}

impl MessageKind {
    pub fn tag(&self) -> KindTag {
        match self {
            MessageKind::TaskAssignment { .. } => KindTag::TaskAssignment,
            MessageKind::VerificationVerdict { .. } => KindTag::VerificationVerdict,
            MessageKind::Exception { .. } => KindTag::Exception,
            MessageKind::StatusUpdate { .. } => KindTag::StatusUpdate,
            MessageKind::Action { .. } => KindTag::Action,
            MessageKind::HumanCommand => KindTag::HumanCommand,
            MessageKind::DecisionRequest { .. } => KindTag::DecisionRequest,
            MessageKind::HumanDecision { .. } => KindTag::HumanDecision,
            MessageKind::Info => KindTag::Info,
        }
    }

    /// Agent ids referenced by the structured record.
    pub fn agents(&self) -> Vec<&AgentId> {
        match self {
            MessageKind::TaskAssignment { agent, .. }
            | MessageKind::VerificationVerdict { agent, .. }
            | MessageKind::Exception { agent, .. }
            | MessageKind::Action { agent, .. } => vec![agent],
            MessageKind::StatusUpdate { agent, .. } | MessageKind::DecisionRequest { agent, .. } => {
                agent.iter().collect()
            }
            _ => Vec::new(),
        }
    }

    /// Task ids referenced by the structured record.
    pub fn tasks(&self) -> Vec<&TaskId> {
        match self {
            MessageKind::TaskAssignment { task, .. } | MessageKind::VerificationVerdict { task, .. } => vec![task],
            MessageKind::Exception { task, .. }
            | MessageKind::StatusUpdate { task, .. }
            | MessageKind::Action { task, .. }
            | MessageKind::DecisionRequest { task, .. } => task.iter().collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    /// Assigned by [`MessageLog::append`]; zero until then.
    pub seq: u64,
    pub tick: u64,
    pub sender: Sender,
    pub channel: Channel,
    pub mentions: Vec<Mention>,
    pub kind: MessageKind,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<String>,
}

impl ChatMessage {
    /// Builds an unsequenced message, deriving mentions from the leading
    /// `@tokens` of `body`.
    pub fn new(
        sender: Sender,
        channel: Channel,
        kind: MessageKind,
        body: impl Into<String>,
    ) -> Result<Self, MentionError> {
        let body = body.into();
        let (mentions, _) = parse_mentions(&body)?;
        Ok(Self {
            seq: 0,
            tick: 0,
            sender,
            channel,
            mentions,
            kind,
            body,
            attachment: None,
        })
    }

    pub fn at_tick(mut self, tick: u64) -> Self {
        self.tick = tick;
        self
    }

    pub fn with_attachment(mut self, attachment: Option<String>) -> Self {
        self.attachment = attachment;
        self
    }

    /// Chat-window rendering: mentions dropped from assignment lines, the
    /// backend `EOF` terminator never shown.
    pub fn display_text(&self) -> String {
        match &self.kind {
            MessageKind::TaskAssignment { task, agent } => {
                format!("- {agent} has been assigned {task}")
            }
            _ => {
                let trimmed = self.body.trim_end();
                match trimmed.strip_suffix("EOF") {
                    Some(rest) if rest.is_empty() || rest.ends_with(char::is_whitespace) => rest.trim_end().to_string(),
                    _ => trimmed.to_string(),
                }
            }
        }
    }

    /// Telemetry (action dispatches) is kept out of the chat timeline.
    pub fn is_displayable(&self) -> bool {
        !matches!(self.kind, MessageKind::Action { .. })
    }

    pub fn sender_agent(&self) -> Option<&AgentId> {
        match &self.sender {
            Sender::Robot(id) => Some(id),
            _ => None,
        }
    }
}
