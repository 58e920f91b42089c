use std::collections::BTreeSet;

use thiserror::Error;

use super::{
    CapabilityTag, Region, RobotProfile, RobotStatus, CLIMB_COST, GRASP_COST, JUMP_COST, MAX_ELEVATION,
    MAX_JUMP_TABLE_LEVEL, MOVE_COST_PER_CELL, OPEN_DOOR_COST,
};
use crate::ids::Cell;
use crate::messaging::ExceptionKind;
use crate::robot::ActionCommand;
use crate::world::{TerrainCell, TerrainMap, WorldObject};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("no traversable path to {0}")]
    Unreachable(Cell),
    #[error("insufficient battery: needs {needed}, has {available}")]
    BatteryInsufficient { needed: u32, available: u32 },
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
}

impl ActionError {
    pub fn exception_kind(&self) -> ExceptionKind {
        match self {
            ActionError::Unreachable(_) => ExceptionKind::Unreachable,
            ActionError::BatteryInsufficient { .. } => ExceptionKind::BatteryInsufficient,
            ActionError::InfeasibleAction(_) => ExceptionKind::InfeasibleAction,
        }
    }
}

fn infeasible(reason: impl Into<String>) -> ActionError {
    ActionError::InfeasibleAction(reason.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPlan {
    /// Cells entered, in order; excludes the start cell.
    pub path: Vec<Cell>,
    pub ticks: u32,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutcome {
    /// A move was accepted; the path is consumed over the following ticks.
    Moving(PathPlan),
    Done,
}

fn afford(status: &RobotStatus, cost: u32) -> Result<(), ActionError> {
    if cost > status.energy {
        Err(ActionError::BatteryInsufficient {
            needed: cost,
            available: status.energy,
        })
    } else {
        Ok(())
    }
}

fn require(profile: &RobotProfile, tag: &str) -> Result<(), ActionError> {
    if profile.has(tag) {
        Ok(())
    } else {
        Err(infeasible(format!("{} lacks `{tag}`", profile.id)))
    }
}

/// Plans a shortest 4-connected path to `target` over cells this robot can
/// enter. Does not mutate anything.
pub fn move_to(
    profile: &RobotProfile,
    status: &RobotStatus,
    target: Cell,
    terrain: &TerrainMap,
) -> Result<PathPlan, ActionError> {
    if !terrain.in_bounds(target) {
        return Err(infeasible(format!("target {target} out of bounds")));
    }
    if status.elevation_level > 0 && terrain.get(status.position) == Some(&TerrainCell::Stairs) {
        return Err(infeasible("must climb down before moving"));
    }
    let path = terrain
        .shortest_path(status.position, target, profile)
        .ok_or(ActionError::Unreachable(target))?;
    let cost = path.len() as u32 * MOVE_COST_PER_CELL;
    afford(status, cost)?;
    let ticks = (path.len() as u32).div_ceil(profile.max_speed.max(1));
    Ok(PathPlan { path, ticks, cost })
}

/// Raises elevation by one beside a low table.
pub fn jump_upward(profile: &RobotProfile, status: &mut RobotStatus, terrain: &TerrainMap) -> Result<(), ActionError> {
    require(profile, CapabilityTag::JUMP)?;
    let target = status.elevation_level + 1;
    let beside_table = status.position.neighbors4().iter().any(|n| {
        matches!(terrain.get(*n), Some(TerrainCell::Table { level })
            if *level <= MAX_JUMP_TABLE_LEVEL && target <= *level)
    });
    if !beside_table {
        return Err(infeasible("no low table adjacent"));
    }
    afford(status, JUMP_COST)?;
    status.spend(JUMP_COST, profile.battery_capacity);
    status.elevation_level = target;
    Ok(())
}

pub fn climb_up(profile: &RobotProfile, status: &mut RobotStatus, terrain: &TerrainMap) -> Result<(), ActionError> {
    require(profile, CapabilityTag::CLIMB_STAIRS)?;
    if terrain.get(status.position) != Some(&TerrainCell::Stairs) {
        return Err(infeasible("not on stairs"));
    }
    if status.elevation_level >= MAX_ELEVATION {
        return Err(infeasible("top of stairs"));
    }
    afford(status, CLIMB_COST)?;
    status.spend(CLIMB_COST, profile.battery_capacity);
    status.elevation_level += 1;
    Ok(())
}

pub fn climb_down(profile: &RobotProfile, status: &mut RobotStatus, terrain: &TerrainMap) -> Result<(), ActionError> {
    require(profile, CapabilityTag::CLIMB_STAIRS)?;
    if terrain.get(status.position) != Some(&TerrainCell::Stairs) {
        return Err(infeasible("not on stairs"));
    }
    if status.elevation_level == 0 {
        return Err(infeasible("already at floor level"));
    }
    afford(status, CLIMB_COST)?;
    status.spend(CLIMB_COST, profile.battery_capacity);
    status.elevation_level -= 1;
    Ok(())
}

/// Picks up an object within one cell and within reach height.
pub fn grasp(
    profile: &RobotProfile,
    status: &mut RobotStatus,
    object_id: &str,
    objects: &mut [WorldObject],
) -> Result<(), ActionError> {
    require(profile, CapabilityTag::GRASP)?;
    let reach = profile.reach_level(status);
    let obj = objects
        .iter_mut()
        .find(|o| o.id == object_id)
        .ok_or_else(|| infeasible(format!("unknown object {object_id}")))?;
    if let Some(holder) = &obj.carried_by {
        return Err(infeasible(format!("{object_id} already held by {holder}")));
    }
    if obj.cell.manhattan(status.position) > 1 {
        return Err(infeasible(format!("{object_id} out of reach")));
    }
    if obj.level > reach {
        return Err(infeasible(format!("{object_id} too high")));
    }
    afford(status, GRASP_COST)?;
    status.spend(GRASP_COST, profile.battery_capacity);
    obj.carried_by = Some(profile.id.clone());
    obj.cell = status.position;
    obj.level = 0;
    Ok(())
}

/// Marks as found every object inside `region` within one cell (Chebyshev)
/// of the robot and no higher than its view level.
pub fn scan(
    profile: &RobotProfile,
    status: &RobotStatus,
    region: Region,
    objects: &[WorldObject],
    found: &mut BTreeSet<String>,
) -> Result<usize, ActionError> {
    require(profile, CapabilityTag::CAMERA)?;
    let view = profile.view_level(status);
    let mut newly = 0;
    for obj in objects {
        if region.contains(obj.cell)
            && obj.cell.chebyshev(status.position) <= 1
            && obj.level <= view
            && found.insert(obj.id.clone())
        {
            newly += 1;
        }
    }
    Ok(newly)
}

pub fn open_door(
    profile: &RobotProfile,
    status: &mut RobotStatus,
    door: Cell,
    terrain: &mut TerrainMap,
) -> Result<(), ActionError> {
    require(profile, CapabilityTag::OPEN_DOOR)?;
    match terrain.get(door) {
        Some(TerrainCell::Door { open: false }) => {}
        Some(TerrainCell::Door { open: true }) => return Err(infeasible("door already open")),
        _ => return Err(infeasible(format!("no door at {door}"))),
    }
    if door.manhattan(status.position) != 1 {
        return Err(infeasible("door not adjacent"));
    }
    afford(status, OPEN_DOOR_COST)?;
    status.spend(OPEN_DOOR_COST, profile.battery_capacity);
    terrain.set(door, TerrainCell::Door { open: true });
    Ok(())
}

/// Validates and applies one action. Moves are only planned here; the
/// caller consumes the returned path tick by tick.
pub fn apply_action(
    profile: &RobotProfile,
    status: &mut RobotStatus,
    action: &ActionCommand,
    terrain: &mut TerrainMap,
    objects: &mut [WorldObject],
    found: &mut BTreeSet<String>,
) -> Result<ActionOutcome, ActionError> {
    if let crate::robot::Health::Fault { reason } = &status.health {
        return Err(infeasible(format!("robot fault: {reason}")));
    }
    match action {
        ActionCommand::MoveTo(target) => {
            let plan = move_to(profile, status, *target, terrain)?;
            if terrain.get(status.position) != Some(&TerrainCell::Stairs) {
                status.elevation_level = 0;
            }
            Ok(ActionOutcome::Moving(plan))
        }
        ActionCommand::JumpUpward => jump_upward(profile, status, terrain).map(|_| ActionOutcome::Done),
        ActionCommand::ClimbUp => climb_up(profile, status, terrain).map(|_| ActionOutcome::Done),
        ActionCommand::ClimbDown => climb_down(profile, status, terrain).map(|_| ActionOutcome::Done),
        ActionCommand::Grasp(id) => grasp(profile, status, id, objects).map(|_| ActionOutcome::Done),
        ActionCommand::Scan(region) => scan(profile, status, *region, objects, found).map(|_| ActionOutcome::Done),
        ActionCommand::OpenDoor(cell) => open_door(profile, status, *cell, terrain).map(|_| ActionOutcome::Done),
        ActionCommand::Wait => Ok(ActionOutcome::Done),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::tests::profile;
    use crate::robot::{RobotKind, TerrainKind};
    use std::collections::VecDeque;

    fn map(rows: &[&str]) -> TerrainMap {
        TerrainMap::from_rows(rows).unwrap()
    }

    /// Independent flood fill: is `to` reachable over '.' cells?
    fn flood_reachable(rows: &[&str], from: Cell, to: Cell) -> bool {
        let h = rows.len() as i32;
        let w = rows[0].len() as i32;
        let open =
            |c: Cell| c.0 >= 0 && c.1 >= 0 && c.0 < w && c.1 < h && rows[c.1 as usize].as_bytes()[c.0 as usize] == b'.';
        let mut seen = vec![from];
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            if c == to {
                return true;
            }
            for n in [
                Cell(c.0 + 1, c.1),
                Cell(c.0 - 1, c.1),
                Cell(c.0, c.1 + 1),
                Cell(c.0, c.1 - 1),
            ] {
                if open(n) && !seen.contains(&n) {
                    seen.push(n);
                    queue.push_back(n);
                }
            }
        }
        false
    }

    #[test]
    fn adjacent_unit_move() {
        let m = map(&["...", "...", "..."]);
        let p = profile("R", RobotKind::Wheeled, &[]);
        let s = p.initial_status(Cell(0, 0));
        let plan = move_to(&p, &s, Cell(1, 0), &m).unwrap();
        assert_eq!(plan.ticks, 1);
        assert_eq!(plan.cost, 1);
    }

    #[test]
    fn enclosed_target_unreachable() {
        let rows = [".....", ".###.", ".#.#.", ".###.", "....."];
        let m = map(&rows);
        let p = profile("R", RobotKind::Wheeled, &[]);
        let s = p.initial_status(Cell(0, 0));
        assert!(!flood_reachable(&rows, Cell(0, 0), Cell(2, 2)));
        assert_eq!(
            move_to(&p, &s, Cell(2, 2), &m),
            Err(ActionError::Unreachable(Cell(2, 2)))
        );
    }

    #[test]
    fn six_cells_at_speed_two_take_three_ticks() {
        let m = map(&["......."]);
        let mut p = profile("R", RobotKind::Wheeled, &[]);
        p.max_speed = 2;
        let s = p.initial_status(Cell(0, 0));
        let plan = move_to(&p, &s, Cell(6, 0), &m).unwrap();
        assert_eq!(plan.path.len(), 6);
        assert_eq!(plan.ticks, 3);
    }

    #[test]
    fn battery_insufficient_rejected() {
        let m = map(&["......"]);
        let p = profile("R", RobotKind::Wheeled, &[]);
        let mut s = p.initial_status(Cell(0, 0));
        s.energy = 3;
        assert_eq!(
            move_to(&p, &s, Cell(5, 0), &m),
            Err(ActionError::BatteryInsufficient {
                needed: 5,
                available: 3
            })
        );
    }

    #[test]
    fn jump_beside_table() {
        let m = map(&[".T."]);
        let dog = profile("Dog", RobotKind::Legged, &["jump"]);
        let mut s = dog.initial_status(Cell(0, 0));
        jump_upward(&dog, &mut s, &m).unwrap();
        assert_eq!(s.elevation_level, 1);
        assert_eq!(s.energy, 98);
        assert!(jump_upward(&dog, &mut s, &m).is_err());
    }

    #[test]
    fn jump_needs_capability_and_table() {
        let m = map(&[".T.", "..."]);
        let rover = profile("Rover", RobotKind::Wheeled, &["wheeled"]);
        let mut s = rover.initial_status(Cell(0, 0));
        assert!(matches!(
            jump_upward(&rover, &mut s, &m),
            Err(ActionError::InfeasibleAction(_))
        ));

        let dog = profile("Dog", RobotKind::Legged, &["jump"]);
        let mut s = dog.initial_status(Cell(0, 1));
        // Adjacency oracle: no 4-neighbour of (0,1) is a table.
        assert!(Cell(0, 1)
            .neighbors4()
            .iter()
            .all(|n| m.get(*n) != Some(&TerrainCell::Table { level: 1 })));
        assert!(matches!(
            jump_upward(&dog, &mut s, &m),
            Err(ActionError::InfeasibleAction(_))
        ));
    }

    #[test]
    fn climbing() {
        let m = map(&["S."]);
        let dog = profile("Dog", RobotKind::Legged, &["climb_stairs"]);
        let mut s = dog.initial_status(Cell(0, 0));
        assert!(climb_down(&dog, &mut s, &m).is_err());
        climb_up(&dog, &mut s, &m).unwrap();
        assert_eq!(s.elevation_level, 1);
        assert_eq!(s.energy, 98);
        climb_down(&dog, &mut s, &m).unwrap();
        assert_eq!(s.elevation_level, 0);

        let rover = profile("Rover", RobotKind::Wheeled, &["wheeled"]);
        let mut s = rover.initial_status(Cell(0, 0));
        assert!(climb_up(&rover, &mut s, &m).is_err());
    }

    #[test]
    fn traversable_set_respected() {
        let m = map(&[".~."]);
        let rover = profile("Rover", RobotKind::Wheeled, &[]);
        let s = rover.initial_status(Cell(0, 0));
        assert!(move_to(&rover, &s, Cell(2, 0), &m).is_err());
        let mut dog = profile("Dog", RobotKind::Legged, &[]);
        dog.traversable.insert(TerrainKind::Rough);
        let plan = move_to(&dog, &dog.initial_status(Cell(0, 0)), Cell(2, 0), &m).unwrap();
        for c in &plan.path {
            assert!(m.passable(*c, &dog));
        }
    }

    #[test]
    fn door_blocks_until_opened() {
        let mut m = map(&[".D."]);
        let arm = profile("Arm", RobotKind::Arm, &["open_door"]);
        let mut s = arm.initial_status(Cell(0, 0));
        assert!(move_to(&arm, &s, Cell(2, 0), &m).is_err());
        open_door(&arm, &mut s, Cell(1, 0), &mut m).unwrap();
        assert!(move_to(&arm, &s, Cell(2, 0), &m).is_ok());
    }

    #[test]
    fn scan_respects_view_level() {
        let objects = vec![
            WorldObject::new("a1", "apple", Cell(1, 0), 0),
            WorldObject::new("a2", "apple", Cell(1, 1), 1),
            WorldObject::new("a3", "apple", Cell(3, 0), 0),
        ];
        let cam = profile("Cam", RobotKind::Wheeled, &["camera"]);
        let s = cam.initial_status(Cell(0, 0));
        let mut found = BTreeSet::new();
        let n = scan(&cam, &s, Region::around(s.position), &objects, &mut found).unwrap();
        assert_eq!(n, 1);
        assert!(found.contains("a1"));
    }
}
