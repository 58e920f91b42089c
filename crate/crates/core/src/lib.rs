//! Orchestration core for supervised multi-robot teams: typed chat and
//! routing, a deterministic gridworld, robot capability models, the
//! assistant's allocator and per-robot verifiers, the session state
//! machine, benchmark metrics and the operator gateway.

pub mod bench;
pub mod gateway;
pub mod ids;
pub mod knowledge;
pub mod messaging;
pub mod planner;
pub mod robot;
pub mod scenes;
pub mod session;
pub mod world;

pub use crate::ids::{AgentId, Cell, IdError, TaskId};
pub use crate::messaging::{
    Channel, ChatMessage, Decision, ExceptionKind, Mention, MessageKind, MessageLog, Sender, SessionSummary,
};
pub use crate::planner::{Assignment, TaskSpec, TaskState, Verdict};
pub use crate::robot::{ActionCommand, CapabilityTag, RobotProfile, RobotStatus};
pub use crate::session::{start_session, Mode, Phase, Session, SessionConfig, SessionError, SessionReport};
pub use crate::world::{Scenario, WorldState};
