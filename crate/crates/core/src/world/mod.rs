//! Deterministic tick-based gridworld.
//!
//! The world owns terrain, objects and every robot's physical state. One call
//! to [`WorldState::tick`] applies at most one queued action per robot in
//! ascending id order, advances in-flight moves, fires scheduled exceptions
//! and returns the exception messages produced. Nothing here reads a clock or
//! an unseeded RNG, so a `(world, actions)` trace always replays identically.

mod goal;
mod scenario;
mod search;
mod terrain;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::goal::{check_goal, GoalCheck, GoalError, Predicate};
pub use self::scenario::{
    load_scenario, parse_scenario, save_scenario, HiddenCell, ManualRef, RobotEntry, Scenario, ScenarioError,
    ScenarioFile, SCENARIO_FORMAT,
};
pub use self::search::{min_steps, SearchError, DEFAULT_SEARCH_BUDGET};
pub use self::terrain::{TerrainCell, TerrainMap};

use crate::ids::{AgentId, Cell};
use crate::messaging::{Channel, ChatMessage, ExceptionKind, MessageKind, Sender};
use crate::robot::{
    apply_action, ActionCommand, ActionError, ActionOutcome, Health, RobotProfile, RobotStatus, LOW_BATTERY_PCT,
    MOVE_COST_PER_CELL,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: String,
    pub cell: Cell,
    pub level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carried_by: Option<AgentId>,
}

impl WorldObject {
    pub fn new(id: &str, kind: &str, cell: Cell, level: u32) -> Self {
        Self {
            id: id.to_string(),
            kind: kind.to_string(),
            cell,
            level,
            carried_by: None,
        }
    }
}

/// Kinds of exception a scenario may schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduledKind {
    TerrainBlock,
    LowBattery,
    Fault,
}

impl ScheduledKind {
    pub fn exception_kind(self) -> ExceptionKind {
        match self {
            ScheduledKind::TerrainBlock => ExceptionKind::TerrainBlock,
            ScheduledKind::LowBattery => ExceptionKind::LowBattery,
            ScheduledKind::Fault => ExceptionKind::Fault,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExceptionEvent {
    pub robot: AgentId,
    pub tick: u64,
    pub kind: ScheduledKind,
    #[serde(default)]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub terrain: TerrainMap,
    pub objects: Vec<WorldObject>,
    pub robots: BTreeMap<AgentId, RobotStatus>,
    pub profiles: BTreeMap<AgentId, RobotProfile>,
    /// Object ids observed by any robot's scan.
    pub found: BTreeSet<String>,
    /// Remaining cells of each in-flight move.
    pub motion: BTreeMap<AgentId, VecDeque<Cell>>,
    pub schedule: Vec<ExceptionEvent>,
    pub tick: u64,
    pub rng_seed: u64,
}

impl WorldState {
    pub fn new(terrain: TerrainMap, objects: Vec<WorldObject>, rng_seed: u64) -> Self {
        Self {
            terrain,
            objects,
            robots: BTreeMap::new(),
            profiles: BTreeMap::new(),
            found: BTreeSet::new(),
            motion: BTreeMap::new(),
            schedule: Vec::new(),
            tick: 0,
            rng_seed,
        }
    }

    pub fn add_robot(&mut self, profile: RobotProfile, position: Cell) {
        let status = profile.initial_status(position);
        self.robots.insert(profile.id.clone(), status);
        self.profiles.insert(profile.id.clone(), profile);
    }

    pub fn object(&self, id: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn is_moving(&self, agent: &AgentId) -> bool {
        self.motion.get(agent).is_some_and(|q| !q.is_empty())
    }

    /// Drops everything `agent` carries at its current cell.
    pub fn release_objects(&mut self, agent: &AgentId) {
        for obj in &mut self.objects {
            if obj.carried_by.as_ref() == Some(agent) {
                obj.carried_by = None;
            }
        }
    }

    pub fn clear_fault(&mut self, agent: &AgentId) {
        if let Some(status) = self.robots.get_mut(agent) {
            status.health = Health::Ok;
        }
    }

    /// Applies `action` as if it completed instantly: a move jumps to its end
    /// cell and pays the whole path. Used for planning, never for the live
    /// tick loop. Returns the energy spent.
    pub fn apply_instant(&mut self, agent: &AgentId, action: &ActionCommand) -> Result<u32, ActionError> {
        let profile = self
            .profiles
            .get(agent)
            .cloned()
            .ok_or_else(|| ActionError::InfeasibleAction(format!("unknown robot {agent}")))?;
        let WorldState {
            terrain,
            objects,
            robots,
            found,
            ..
        } = self;
        let status = robots
            .get_mut(agent)
            .ok_or_else(|| ActionError::InfeasibleAction(format!("unknown robot {agent}")))?;
        let before = status.energy;
        if let ActionOutcome::Moving(plan) = apply_action(&profile, status, action, terrain, objects, found)? {
            if let Some(&end) = plan.path.last() {
                status.position = end;
                status.spend(plan.cost, profile.battery_capacity);
                for obj in objects.iter_mut() {
                    if obj.carried_by.as_ref() == Some(agent) {
                        obj.cell = end;
                    }
                }
            }
        }
        Ok(before - status.energy)
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("world state serializes");
        hex::encode(Sha256::digest(&bytes).as_slice())
    }

    /// Advances one tick. Failed actions and scheduled events become
    /// exception messages stamped with the tick being processed.
    pub fn tick(&mut self, actions: &BTreeMap<AgentId, ActionCommand>) -> Vec<ChatMessage> {
        let now = self.tick;
        let mut out = Vec::new();
        let WorldState {
            terrain,
            objects,
            robots,
            profiles,
            found,
            motion,
            ..
        } = self;

        for (agent, status) in robots.iter_mut() {
            let profile = &profiles[agent];
            let was_charged = status.battery_pct >= LOW_BATTERY_PCT;
            if let Some(action) = actions.get(agent) {
                motion.remove(agent);
                match apply_action(profile, status, action, terrain, objects, found) {
                    Ok(ActionOutcome::Moving(plan)) => {
                        motion.insert(agent.clone(), plan.path.into());
                    }
                    Ok(ActionOutcome::Done) => {}
                    Err(err) => out.push(exception_message(
                        agent,
                        status,
                        err.exception_kind(),
                        &format!("{action}: {err}"),
                        None,
                        now,
                    )),
                }
            }
            if let Some(queue) = motion.get_mut(agent) {
                for _ in 0..profile.max_speed {
                    let Some(next) = queue.pop_front() else { break };
                    status.position = next;
                    status.spend(MOVE_COST_PER_CELL, profile.battery_capacity);
                    for obj in objects.iter_mut() {
                        if obj.carried_by.as_ref() == Some(agent) {
                            obj.cell = next;
                        }
                    }
                }
                if queue.is_empty() {
                    motion.remove(agent);
                }
            }
            if was_charged && status.battery_pct < LOW_BATTERY_PCT && status.health.is_ok() {
                status.health = Health::Fault {
                    reason: "low battery".into(),
                };
                motion.remove(agent);
                out.push(exception_message(
                    agent,
                    status,
                    ExceptionKind::LowBattery,
                    &format!("battery at {:.1}%", status.battery_pct),
                    None,
                    now,
                ));
            }
        }

        let due: Vec<ExceptionEvent> = self.schedule.iter().filter(|e| e.tick == now).cloned().collect();
        for event in due {
            out.extend(self.fire(&event));
        }
        self.tick += 1;
        out
    }

    fn fire(&mut self, event: &ExceptionEvent) -> Option<ChatMessage> {
        let profile = self.profiles.get(&event.robot)?;
        let capacity = profile.battery_capacity;
        let status = self.robots.get_mut(&event.robot)?;
        let reason = match event.kind {
            ScheduledKind::TerrainBlock => format!("terrain_block: {}", event.detail),
            ScheduledKind::LowBattery => {
                let floor = (f64::from(capacity) * (LOW_BATTERY_PCT - 1.0) / 100.0).floor() as u32;
                if status.energy > floor {
                    let drop = status.energy - floor;
                    status.spend(drop, capacity);
                }
                "low battery".to_string()
            }
            ScheduledKind::Fault => format!("fault: {}", event.detail),
        };
        status.health = Health::Fault { reason };
        self.motion.remove(&event.robot);
        let status = &self.robots[&event.robot];
        let detail = if event.detail.is_empty() {
            event.kind.exception_kind().as_str().to_string()
        } else {
            event.detail.clone()
        };
        let msg = exception_message(
            &event.robot,
            status,
            event.kind.exception_kind(),
            &detail,
            event.attachment.clone(),
            self.tick,
        );
        self.release_objects(&event.robot);
        Some(msg)
    }
}

fn exception_message(
    agent: &AgentId,
    status: &RobotStatus,
    kind: ExceptionKind,
    detail: &str,
    attachment: Option<String>,
    tick: u64,
) -> ChatMessage {
    ChatMessage::new(
        Sender::Robot(agent.clone()),
        Channel::Group,
        MessageKind::Exception {
            agent: agent.clone(),
            task: status.current_task.clone(),
            exception: kind,
        },
        format!("exception {}: {detail}", kind.as_str()),
    )
    .expect("exception bodies carry no leading mentions")
    .at_tick(tick)
    .with_attachment(attachment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::tests::profile;
    use crate::robot::RobotKind;

    fn small_world() -> WorldState {
        let mut w = WorldState::new(TerrainMap::from_rows(&["....", "...."]).unwrap(), vec![], 7);
        w.add_robot(profile("A", RobotKind::Wheeled, &[]), Cell(0, 0));
        w.add_robot(profile("B", RobotKind::Wheeled, &[]), Cell(3, 1));
        w
    }

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    #[test]
    fn idle_tick_only_advances_clock() {
        let mut w = small_world();
        let before = w.clone();
        let out = w.tick(&BTreeMap::new());
        assert!(out.is_empty());
        assert_eq!(w.tick, 1);
        w.tick = 0;
        assert_eq!(w, before);
    }

    #[test]
    fn scheduled_exception_fires_on_its_tick() {
        let mut w = small_world();
        w.schedule.push(ExceptionEvent {
            robot: id("A"),
            tick: 7,
            kind: ScheduledKind::LowBattery,
            detail: "cell sag".into(),
            attachment: None,
        });
        let mut fired = Vec::new();
        for _ in 0..10 {
            for m in w.tick(&BTreeMap::new()) {
                fired.push(m.tick);
            }
        }
        assert_eq!(fired, vec![7]);
        assert!(w.robots[&id("A")].battery_pct < LOW_BATTERY_PCT);
        assert!(!w.robots[&id("A")].health.is_ok());
    }

    #[test]
    fn move_spans_ticks_and_costs_energy() {
        let mut w = small_world();
        let actions = BTreeMap::from([(id("A"), ActionCommand::MoveTo(Cell(3, 0)))]);
        w.tick(&actions);
        assert_eq!(w.robots[&id("A")].position, Cell(1, 0));
        w.tick(&BTreeMap::new());
        w.tick(&BTreeMap::new());
        assert_eq!(w.robots[&id("A")].position, Cell(3, 0));
        assert!(!w.is_moving(&id("A")));
        assert_eq!(w.robots[&id("A")].energy, 97);
    }

    #[test]
    fn five_unit_moves_cost_five_percent() {
        let mut w = small_world();
        for x in [1, 2, 3, 2, 1] {
            w.tick(&BTreeMap::from([(id("A"), ActionCommand::MoveTo(Cell(x, 0)))]));
        }
        // Cost-accounting oracle: 5 cells × 1 unit over capacity 100.
        let expected = 100.0 - 5.0 / 100.0 * 100.0;
        assert_eq!(w.robots[&id("A")].battery_pct, expected);
    }

    #[test]
    fn failed_action_emits_one_exception() {
        let mut w = small_world();
        let out = w.tick(&BTreeMap::from([(id("A"), ActionCommand::ClimbUp)]));
        assert_eq!(out.len(), 1);
        assert!(matches!(
            out[0].kind,
            MessageKind::Exception {
                exception: ExceptionKind::InfeasibleAction,
                ..
            }
        ));
    }

    #[test]
    fn fault_latches() {
        let mut w = small_world();
        w.schedule.push(ExceptionEvent {
            robot: id("B"),
            tick: 0,
            kind: ScheduledKind::Fault,
            detail: "motor".into(),
            attachment: None,
        });
        w.tick(&BTreeMap::new());
        for _ in 0..3 {
            w.tick(&BTreeMap::new());
        }
        assert_eq!(
            w.robots[&id("B")].health,
            Health::Fault {
                reason: "fault: motor".into()
            }
        );
        w.clear_fault(&id("B"));
        assert!(w.robots[&id("B")].health.is_ok());
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut w = small_world();
            let mut hashes = Vec::new();
            for t in 0..6 {
                let mut actions = BTreeMap::new();
                if t % 2 == 0 {
                    actions.insert(id("A"), ActionCommand::MoveTo(Cell(3 - t / 2, 1)));
                }
                w.tick(&actions);
                hashes.push(w.state_hash());
            }
            hashes
        };
        assert_eq!(run(), run());
    }
}
