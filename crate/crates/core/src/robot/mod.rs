//! Robot capability profiles, live status and the uniform action interface.

mod actions;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::actions::{
    apply_action, climb_down, climb_up, grasp, jump_upward, move_to, open_door, scan, ActionError, ActionOutcome,
    PathPlan,
};

use crate::ids::{AgentId, Cell, TaskId};

pub const MOVE_COST_PER_CELL: u32 = 1;
pub const CLIMB_COST: u32 = 2;
pub const JUMP_COST: u32 = 2;
pub const GRASP_COST: u32 = 1;
pub const OPEN_DOOR_COST: u32 = 1;
/// Battery percentage below which a robot raises a low-battery exception.
pub const LOW_BATTERY_PCT: f64 = 10.0;
/// Highest elevation reachable on stairs.
pub const MAX_ELEVATION: u32 = 3;
/// Tallest table a robot can jump beside.
pub const MAX_JUMP_TABLE_LEVEL: u32 = 1;

/// Open-vocabulary capability token. Unknown tags are kept as-is.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CapabilityTag(String);

impl CapabilityTag {
    pub const WHEELED: &'static str = "wheeled";
    pub const LEGGED: &'static str = "legged";
    pub const AERIAL: &'static str = "aerial";
    pub const ARM: &'static str = "arm";
    pub const CLIMB_STAIRS: &'static str = "climb_stairs";
    pub const JUMP: &'static str = "jump";
    pub const ROUGH_TERRAIN: &'static str = "rough_terrain";
    pub const OPEN_DOOR: &'static str = "open_door";
    pub const GRASP: &'static str = "grasp";
    pub const CAMERA: &'static str = "camera";

    pub fn new(tag: impl Into<String>) -> Self {
        Self(tag.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CapabilityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CapabilityTag {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

pub fn capability_set<'a>(tags: impl IntoIterator<Item = &'a str>) -> BTreeSet<CapabilityTag> {
    tags.into_iter().map(CapabilityTag::new).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    Wheeled,
    Legged,
    Aerial,
    Arm,
}

/// Terrain classes a profile may list as traversable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Rough,
    Stairs,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub id: AgentId,
    pub kind: RobotKind,
    pub height_m: f64,
    pub width_m: f64,
    /// Cells per tick.
    pub max_speed: u32,
    /// Energy units at 100 %.
    pub battery_capacity: u32,
    /// Charge at session start.
    pub battery_pct: f64,
    pub capabilities: BTreeSet<CapabilityTag>,
    pub traversable: BTreeSet<TerrainKind>,
}

impl RobotProfile {
    pub fn has(&self, tag: &str) -> bool {
        self.capabilities.iter().any(|c| c.as_str() == tag)
    }

    /// Violations of the profile invariants; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=100.0).contains(&self.battery_pct) {
            out.push(format!(
                "{}: battery_pct {} outside [0, 100]",
                self.id, self.battery_pct
            ));
        }
        if self.max_speed < 1 {
            out.push(format!("{}: max_speed must be at least 1", self.id));
        }
        if !(self.height_m > 0.0 && self.width_m > 0.0) {
            out.push(format!("{}: dimensions must be positive", self.id));
        }
        if self.battery_capacity == 0 {
            out.push(format!("{}: battery_capacity must be positive", self.id));
        }
        out
    }

    /// Energy units at session start.
    pub fn initial_energy(&self) -> u32 {
        (f64::from(self.battery_capacity) * self.battery_pct / 100.0).floor() as u32
    }

    pub fn initial_status(&self, position: Cell) -> RobotStatus {
        let energy = self.initial_energy();
        RobotStatus {
            position,
            elevation_level: 0,
            battery_pct: pct(energy, self.battery_capacity),
            energy,
            current_task: None,
            progress: 0.0,
            health: Health::Ok,
        }
    }

    /// Height from which this robot sees objects.
    pub fn view_level(&self, status: &RobotStatus) -> u32 {
        status.elevation_level + u32::from(self.kind == RobotKind::Aerial)
    }

    /// Height up to which this robot can grasp objects.
    pub fn reach_level(&self, status: &RobotStatus) -> u32 {
        self.view_level(status) + u32::from(self.has(CapabilityTag::ARM))
    }
}

pub(crate) fn pct(energy: u32, capacity: u32) -> f64 {
    if capacity == 0 {
        0.0
    } else {
        f64::from(energy) * 100.0 / f64::from(capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Ok,
    Fault { reason: String },
}

impl Health {
    pub fn is_ok(&self) -> bool {
        matches!(self, Health::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotStatus {
    pub position: Cell,
    pub elevation_level: u32,
    pub battery_pct: f64,
    /// Remaining energy units; `battery_pct` is derived from it.
    pub energy: u32,
    pub current_task: Option<TaskId>,
    pub progress: f64,
    pub health: Health,
}

impl RobotStatus {
    /// Deducts `cost` energy. Never goes below zero; callers check
    /// affordability first.
    pub(crate) fn spend(&mut self, cost: u32, capacity: u32) {
        self.energy = self.energy.saturating_sub(cost);
        self.battery_pct = pct(self.energy, capacity);
    }

    pub fn set_task(&mut self, task: Option<TaskId>) {
        self.current_task = task;
        self.progress = 0.0;
    }

    pub fn set_progress(&mut self, progress: f64) {
        self.progress = if self.current_task.is_some() {
            progress.clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
}

/// Inclusive axis-aligned rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Region {
    pub min: Cell,
    pub max: Cell,
}

impl Region {
    pub fn new(a: Cell, b: Cell) -> Self {
        Self {
            min: Cell(a.0.min(b.0), a.1.min(b.1)),
            max: Cell(a.0.max(b.0), a.1.max(b.1)),
        }
    }

    pub fn cell(c: Cell) -> Self {
        Self { min: c, max: c }
    }

    /// 3×3 block centred on `c`.
    pub fn around(c: Cell) -> Self {
        Self::new(Cell(c.0 - 1, c.1 - 1), Cell(c.0 + 1, c.1 + 1))
    }

    pub fn contains(&self, c: Cell) -> bool {
        (self.min.0..=self.max.0).contains(&c.0) && (self.min.1..=self.max.1).contains(&c.1)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.min.1..=self.max.1).flat_map(move |y| (self.min.0..=self.max.0).map(move |x| Cell(x, y)))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.min == self.max {
            write!(f, "{}", self.min)
        } else {
            write!(f, "{}..{}", self.min, self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCommand {
    MoveTo(Cell),
    JumpUpward,
    ClimbUp,
    ClimbDown,
    Grasp(String),
    Scan(Region),
    OpenDoor(Cell),
    Wait,
}

impl fmt::Display for ActionCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionCommand::MoveTo(c) => write!(f, "move_to({c})"),
            ActionCommand::JumpUpward => f.write_str("jump_upward()"),
            ActionCommand::ClimbUp => f.write_str("climb_up()"),
            ActionCommand::ClimbDown => f.write_str("climb_down()"),
            ActionCommand::Grasp(o) => write!(f, "grasp({o})"),
            ActionCommand::Scan(r) => write!(f, "scan({r})"),
            ActionCommand::OpenDoor(c) => write!(f, "open_door({c})"),
            ActionCommand::Wait => f.write_str("wait()"),
        }
    }
}

impl ActionCommand {
    /// Parses the textual command vocabulary used in human instructions,
    /// e.g. `climb_up`, `move_to 3,4`, `grasp apple1`, `open_door 2,2`.
    pub fn parse(text: &str) -> Option<Self> {
        let mut words = text.split_whitespace();
        let verb = words.next()?.trim_end_matches("()");
        let arg = words.next();
        let cell = |s: &str| -> Option<Cell> {
            let s = s.trim_start_matches('(').trim_end_matches(')');
            let (x, y) = s.split_once(',')?;
            Some(Cell(x.trim().parse().ok()?, y.trim().parse().ok()?))
        };
        match verb {
            "move_to" => Some(ActionCommand::MoveTo(cell(arg?)?)),
            "jump_upward" | "jump" => Some(ActionCommand::JumpUpward),
            "climb_up" => Some(ActionCommand::ClimbUp),
            "climb_down" => Some(ActionCommand::ClimbDown),
            "grasp" => Some(ActionCommand::Grasp(arg?.to_string())),
            "open_door" => Some(ActionCommand::OpenDoor(cell(arg?)?)),
            "wait" | "stop" => Some(ActionCommand::Wait),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatusError {
    #[error("robot has no active task")]
    NoActiveTask,
}

/// Requirement ⊆ capabilities.
pub fn can_perform(profile: &RobotProfile, requirement: &BTreeSet<CapabilityTag>) -> bool {
    requirement.is_subset(&profile.capabilities)
}

pub fn get_status(status: &RobotStatus) -> RobotStatus {
    status.clone()
}

pub fn get_task_progress(status: &RobotStatus) -> Result<(TaskId, f64), StatusError> {
    status
        .current_task
        .clone()
        .map(|t| (t, status.progress))
        .ok_or(StatusError::NoActiveTask)
}
