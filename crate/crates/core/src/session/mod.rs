//! One supervised run of a scenario: allocation, per-robot verification,
//! tick-driven execution, exception handling with a synchronous status
//! refresh, yes/no human gates and checkpoints.
//!
//! Every state change the session makes is visible in its chat log, so
//! metrics such as [`recount_steps`] can be recomputed from a persisted log.

mod bundle;
mod checkpoint;
mod engine;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::bundle::{report_hash, ReplayBundle, BUNDLE_FORMAT};
pub use self::checkpoint::CHECKPOINT_VERSION;
pub use self::engine::start_session;

use crate::ids::{AgentId, Cell, TaskId};
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::messaging::{ChatMessage, ChatRoom, Decision, MentionError, MessageKind, MessageLog, SessionSummary};
use crate::planner::{Assignment, TaskSpec, TaskState};
use crate::robot::ActionCommand;
use crate::world::{TerrainCell, WorldState};

/// Re-queries of an external backend after a rejected proposal.
pub const MAX_BACKEND_RETRIES: usize = 2;

/// Which safeguards are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Verification and human gates.
    Full,
    /// Verification only; a robot's veto always wins.
    NoHuman,
    /// Neither: assignments go straight to execution.
    NoHumanNoVerify,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::NoHuman, Mode::NoHumanNoVerify];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoHuman => "no-human",
            Mode::NoHumanNoVerify => "no-human-no-verify",
        }
    }

    pub fn human_gates(self) -> bool {
        self == Mode::Full
    }

    pub fn verifies(self) -> bool {
        self != Mode::NoHumanNoVerify
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s || format!("{m:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}` (expected full, no-human or no-human-no-verify)"))
    }
}

/// How gate questions get answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "decisions", rename_all = "snake_case")]
pub enum DecisionPolicy {
    /// Wait for [`Session::decide`].
    Interactive,
    /// Answers consumed in order; once exhausted, gates time out to yes.
    Scripted(Vec<Decision>),
    /// Every gate is answered yes by the human (and counted).
    AutoYes,
    /// No gate is raised at all; contested assignments proceed silently.
    AutoProceed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    RuleBased,
    /// A child process speaking the planner JSON schema on stdin/stdout.
    External {
        program: String,
        args: Vec<String>,
    },
    /// Captured backend answers replayed in order.
    Recorded {
        responses: Vec<serde_json::Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Overrides the scenario's tick budget.
    #[serde(default)]
    pub max_ticks: Option<u64>,
    pub decision_policy: DecisionPolicy,
    pub backend: BackendChoice,
    /// Whether a human command preempts an in-flight move instead of
    /// waiting for it to finish.
    #[serde(default)]
    pub interrupt_on_command: bool,
}

impl SessionConfig {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            max_ticks: None,
            decision_policy: DecisionPolicy::AutoYes,
            backend: BackendChoice::RuleBased,
            interrupt_on_command: false,
        }
    }

    pub fn with_policy(mut self, policy: DecisionPolicy) -> Self {
        self.decision_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.decision_policy == DecisionPolicy::Interactive && matches!(self.backend, BackendChoice::Recorded { .. })
        {
            return Err(SessionError::Config(
                "interactive decisions cannot be combined with a recorded backend".into(),
            ));
        }
        if self.max_ticks == Some(0) {
            return Err(SessionError::Config("max_ticks must be positive".into()));
        }
        if let BackendChoice::External { program, .. } = &self.backend {
            if program.trim().is_empty() {
                return Err(SessionError::Config("external backend needs a program".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Allocating,
    Verifying,
    Executing,
    Reallocating,
    Completed,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Allocating => "allocating",
            Phase::Verifying => "verifying",
            Phase::Executing => "executing",
            Phase::Reallocating => "reallocating",
            Phase::Completed => "completed",
            Phase::Failed => "failed",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Mention(#[from] MentionError),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("session has not started")]
    NotStarted,
    #[error("session is closed")]
    SessionClosed,
    #[error("robots can only be added before the session starts")]
    NotInInit,
    #[error("no decision is pending")]
    NoPendingDecision,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

/// Where a human command is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandChannel {
    Group,
    Direct(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// One world tick elapsed.
    Ticked,
    /// Planning is blocked on [`Session::decide`]; no tick elapsed.
    AwaitingDecision,
    Finished,
    NotStarted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum GateKind {
    /// The robot found no route but the assistant still rates the pair
    /// feasible. Yes holds the task for the robot until it can verify.
    Disagreement { task: TaskId, agent: AgentId },
    /// No robot can take the task. Yes keeps it open for later rounds.
    Unassignable { task: TaskId },
}

impl GateKind {
    pub fn task(&self) -> &TaskId {
        match self {
            GateKind::Disagreement { task, .. } | GateKind::Unassignable { task } => task,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    /// Seq of the decision request message.
    pub request_seq: u64,
}

/// Observable changes, drained by the gateway.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Message(ChatMessage),
    PhaseChange { from: Phase, to: Phase },
}

/// Everything a checkpoint must carry to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub scenario: String,
    pub description: String,
    pub phase: Phase,
    pub step_count: u64,
    pub decisions: u64,
    /// Dispatched actions the world refused.
    pub infeasible_actions: u64,
    pub room: ChatRoom,
    pub summary: SessionSummary,
    /// Ground truth.
    pub world: WorldState,
    pub tasks: Vec<TaskSpec>,
    pub knowledge: KnowledgeBase,
    /// Manuals still to ingest when the session starts: (agent, name, text).
    pub manuals: Vec<(AgentId, String, String)>,
    /// Truth of hidden cells the assistant has not seen yet.
    #[serde(with = "cell_map")]
    pub unrevealed: BTreeMap<Cell, TerrainCell>,
    /// What the published map shows at those cells.
    #[serde(with = "cell_map")]
    pub published: BTreeMap<Cell, TerrainCell>,
    pub live: BTreeMap<TaskId, Assignment>,
    pub plans: BTreeMap<AgentId, VecDeque<ActionCommand>>,
    pub legs: BTreeMap<AgentId, Vec<Vec<Cell>>>,
    pub in_flight: BTreeMap<AgentId, ActionCommand>,
    pub commands: BTreeMap<AgentId, VecDeque<ActionCommand>>,
    pub exclusions: BTreeSet<(TaskId, AgentId)>,
    /// Contested tasks held for a robot by a human yes.
    pub held: BTreeMap<TaskId, AgentId>,
    /// Unassignable tasks the human already chose to keep open.
    pub retry_gated: BTreeSet<TaskId>,
    pub gates: VecDeque<Gate>,
    pub hard_faults: BTreeSet<AgentId>,
    pub instructions: Vec<String>,
    pub decision_cursor: usize,
    pub backend_cursor: usize,
    pub last_decision: Option<Decision>,
    pub needs_planning: bool,
    /// The next planning round is a reallocation.
    pub realloc: bool,
    pub max_ticks: u64,
}

/// JSON object keys must be strings, so cell-keyed maps travel as pairs.
mod cell_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::ids::Cell;
    use crate::world::TerrainCell;

    pub fn serialize<S: Serializer>(map: &BTreeMap<Cell, TerrainCell>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Cell, TerrainCell>, D::Error> {
        Ok(Vec::<(Cell, TerrainCell)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: TaskId,
    pub state: TaskState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub mode: Mode,
    pub seed: u64,
    pub phase: Phase,
    pub outcomes: Vec<TaskOutcome>,
    pub success: bool,
    pub step_count: u64,
    pub tick_count: u64,
    pub decisions: u64,
    pub infeasible_actions: u64,
    pub log_sha256: String,
    pub world_sha256: String,
    pub log: MessageLog,
}

impl SessionReport {
    /// Canonical JSON; identical runs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

/// Steps as defined for metrics: dispatched actions plus human decisions.
pub fn recount_steps(log: &MessageLog) -> u64 {
    log.iter()
        .filter(|m| matches!(m.kind, MessageKind::Action { .. } | MessageKind::HumanDecision { .. }))
        .count() as u64
}

/// A session over one scenario instance.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    scenario_hash: String,
    state: SessionState,
    events: Vec<SessionEvent>,
}

impl Session {
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn scenario_hash(&self) -> &str {
        &self.scenario_hash
    }

    pub fn log(&self) -> &MessageLog {
        self.state.room.log()
    }

    pub fn pending_gate(&self) -> Option<&Gate> {
        self.state.gates.front()
    }

    /// Takes the events produced since the last call.
    pub fn drain_events(&mut self) -> Vec<SessionEvent> {
        std::mem::take(&mut self.events)
    }
}
