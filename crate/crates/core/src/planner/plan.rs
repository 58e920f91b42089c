//! Turning a task's goal predicates into a concrete action sequence for one
//! robot, and checking that sequence against the robot's own view.

use std::collections::{BTreeMap, BTreeSet};

use super::{RejectReason, TaskSpec, Verdict};
use crate::ids::{AgentId, Cell};
use crate::robot::{
    can_perform, ActionCommand, CapabilityTag, Health, Region, RobotKind, RobotProfile, RobotStatus, CLIMB_COST,
    GRASP_COST, JUMP_COST, LOW_BATTERY_PCT, MAX_ELEVATION, MAX_JUMP_TABLE_LEVEL, MOVE_COST_PER_CELL, OPEN_DOOR_COST,
};
use crate::world::{check_goal, Predicate, TerrainCell, WorldState};

/// Action sequence for one (robot, task) pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskPlan {
    pub actions: Vec<ActionCommand>,
    /// Estimated energy: path lengths plus per-action costs.
    pub cost: u32,
    /// Capabilities the goals imply that this robot does not have.
    pub missing: BTreeSet<CapabilityTag>,
    /// Some approach cell could not be reached on the view used.
    pub unreachable: bool,
    /// The task names a different robot in a `robot_at` goal.
    pub foreign: bool,
    /// Cells crossed by each move, as planned.
    pub legs: Vec<Vec<Cell>>,
}

/// Energy a robot may spend without dropping under the low-battery line.
pub fn usable_energy(profile: &RobotProfile, status: &RobotStatus) -> u32 {
    let reserve = (f64::from(profile.battery_capacity) * LOW_BATTERY_PCT / 100.0).ceil() as u32;
    status.energy.saturating_sub(reserve)
}

struct Builder<'a> {
    profile: &'a RobotProfile,
    view: &'a WorldState,
    open: BTreeSet<Cell>,
    pos: Cell,
    elev: u32,
    found: BTreeSet<String>,
    carrying: BTreeSet<String>,
    plan: TaskPlan,
}

enum Approach {
    Ground,
    Jump,
    Climb(u32),
}

impl Builder<'_> {
    fn base_view(&self) -> u32 {
        u32::from(self.profile.kind == RobotKind::Aerial)
    }

    fn passable(&self, c: Cell) -> bool {
        match self.view.terrain.get(c) {
            Some(TerrainCell::Door { open }) => {
                (*open || self.open.contains(&c)) && TerrainCell::Flat.passable_for(self.profile)
            }
            Some(t) => t.passable_for(self.profile),
            None => false,
        }
    }

    /// Closest cell (BFS distance, then cell order) satisfying `ok`. When
    /// none is reachable, falls back to the Manhattan-closest such cell with
    /// `reachable = false`.
    fn search(&self, ok: impl Fn(Cell) -> bool) -> (Option<(Cell, u32)>, bool) {
        let terrain = &self.view.terrain;
        let field = terrain.bfs_distances(self.pos, |c| self.passable(c));
        let best = terrain
            .cells()
            .filter(|(c, _)| ok(*c))
            .filter_map(|(c, _)| terrain.distance_in(&field, c).map(|d| (d, c)))
            .min();
        if let Some((d, c)) = best {
            return (Some((c, d)), true);
        }
        let fallback = terrain
            .cells()
            .filter(|(c, _)| ok(*c))
            .map(|(c, _)| (c.manhattan(self.pos), c))
            .min()
            .map(|(d, c)| (c, d));
        (fallback, false)
    }

    fn pick(&mut self, found: (Option<(Cell, u32)>, bool)) -> Option<(Cell, u32)> {
        if !found.1 {
            self.plan.unreachable = true;
        }
        found.0
    }

    fn distance_to(&self, ok: impl Fn(Cell) -> bool) -> Option<u32> {
        let terrain = &self.view.terrain;
        let field = terrain.bfs_distances(self.pos, |c| self.passable(c));
        terrain
            .cells()
            .filter(|(c, _)| ok(*c))
            .filter_map(|(c, _)| terrain.distance_in(&field, c))
            .min()
    }

    fn push(&mut self, action: ActionCommand, cost: u32) {
        self.plan.actions.push(action);
        self.plan.cost += cost;
    }

    fn move_to(&mut self, target: Cell, dist: u32) {
        if target == self.pos {
            return;
        }
        if self.elev > 0 && self.view.terrain.get(self.pos) == Some(&TerrainCell::Stairs) {
            for _ in 0..self.elev {
                self.push(ActionCommand::ClimbDown, CLIMB_COST);
            }
        }
        let leg = self
            .view
            .terrain
            .bfs_path(self.pos, target, |c| self.passable(c))
            .unwrap_or_default();
        self.plan.legs.push(leg);
        self.push(ActionCommand::MoveTo(target), dist * MOVE_COST_PER_CELL);
        self.pos = target;
        self.elev = 0;
    }

    fn need(&mut self, tag: &str) {
        if !self.profile.has(tag) {
            self.plan.missing.insert(CapabilityTag::new(tag));
        }
    }

    fn is_low_table_beside(&self, c: Cell) -> bool {
        c.neighbors4().iter().any(|n| {
            matches!(self.view.terrain.get(*n), Some(TerrainCell::Table { level }) if *level == MAX_JUMP_TABLE_LEVEL)
        })
    }

    /// Picks how to get `extra` levels above floor height next to `target`.
    /// `near` says whether a standing cell is close enough.
    fn approach(&mut self, extra: u32, near: impl Fn(Cell) -> bool + Copy) -> (Approach, Option<(Cell, u32)>) {
        if extra == 0 {
            let r = self.search(near);
            return (Approach::Ground, self.pick(r));
        }
        let mut options: Vec<(u32, Approach)> = Vec::new();
        if extra <= MAX_JUMP_TABLE_LEVEL && self.profile.has(CapabilityTag::JUMP) {
            if let Some(d) = self.distance_to(|c| near(c) && self.is_low_table_beside(c)) {
                options.push((d + JUMP_COST, Approach::Jump));
            }
        }
        if extra <= MAX_ELEVATION && self.profile.has(CapabilityTag::CLIMB_STAIRS) {
            let on_stairs = |c: Cell| self.view.terrain.get(c) == Some(&TerrainCell::Stairs);
            if let Some(d) = self.distance_to(|c| near(c) && on_stairs(c)) {
                options.push((d + CLIMB_COST * extra, Approach::Climb(extra)));
            }
        }
        let choice = options.into_iter().min_by_key(|(c, _)| *c).map(|(_, a)| a);
        let approach = match choice {
            Some(a) => a,
            None => {
                // Nominal fallback: what a jumping robot would do.
                if !self.profile.has(CapabilityTag::JUMP) {
                    self.plan.missing.insert(CapabilityTag::new(CapabilityTag::JUMP));
                } else {
                    self.plan.unreachable = true;
                }
                Approach::Jump
            }
        };
        let cell = match approach {
            Approach::Jump => {
                let (with_table, ok) = self.search(|c| near(c) && self.is_low_table_beside(c));
                if ok {
                    with_table
                } else {
                    let r = self.search(near);
                    self.pick(r)
                }
            }
            Approach::Climb(_) => {
                let r = self.search(|c| near(c) && self.view.terrain.get(c) == Some(&TerrainCell::Stairs));
                self.pick(r)
            }
            Approach::Ground => unreachable!("ground approach handled above"),
        };
        (approach, cell)
    }

    fn rise(&mut self, approach: &Approach) {
        match approach {
            Approach::Ground => {}
            Approach::Jump => {
                self.push(ActionCommand::JumpUpward, JUMP_COST);
                self.elev += 1;
            }
            Approach::Climb(n) => {
                for _ in 0..*n {
                    self.push(ActionCommand::ClimbUp, CLIMB_COST);
                }
                self.elev += n;
            }
        }
    }

    fn scan_here(&mut self) {
        let view_level = self.elev + self.base_view();
        let region = Region::around(self.pos);
        self.push(ActionCommand::Scan(region), 0);
        for o in &self.view.objects {
            if region.contains(o.cell) && o.level <= view_level {
                self.found.insert(o.id.clone());
            }
        }
    }

    fn found_goal(&mut self, kind: &str, count: u32) {
        self.need(CapabilityTag::CAMERA);
        loop {
            let have = self
                .view
                .objects
                .iter()
                .filter(|o| o.kind == kind && self.found.contains(&o.id))
                .count() as u32;
            if have >= count {
                return;
            }
            // Nearest unfound object of this kind, by floor distance.
            let candidates: Vec<(Cell, u32, String)> = self
                .view
                .objects
                .iter()
                .filter(|o| o.kind == kind && !self.found.contains(&o.id) && o.carried_by.is_none())
                .map(|o| (o.cell, o.level, o.id.clone()))
                .collect();
            let best = candidates
                .iter()
                .map(|(cell, level, id)| {
                    let d = self.distance_to(|c| c.chebyshev(*cell) <= 1).unwrap_or(u32::MAX);
                    (d, id.clone(), *cell, *level)
                })
                .min();
            let Some((_, _, target, level)) = best else {
                self.plan.unreachable = true;
                return;
            };
            let extra = level.saturating_sub(self.base_view());
            let (approach, cell) = self.approach(extra, |c| c.chebyshev(target) <= 1);
            let Some((cell, dist)) = cell else {
                self.plan.unreachable = true;
                return;
            };
            self.move_to(cell, dist);
            self.rise(&approach);
            let before = self.found.len();
            self.scan_here();
            if self.found.len() == before {
                // The chosen vantage cannot see the object after all.
                self.plan.unreachable = true;
                return;
            }
        }
    }

    fn object_goal(&mut self, object: &str, region: Region) {
        self.need(CapabilityTag::GRASP);
        let Some(obj) = self.view.object(object) else {
            self.plan.unreachable = true;
            return;
        };
        if !self.carrying.contains(object) {
            if region.contains(obj.cell) {
                return;
            }
            if obj.carried_by.as_ref().is_some_and(|h| h != &self.profile.id) {
                self.plan.unreachable = true;
                return;
            }
            let (target, level) = (obj.cell, obj.level);
            let reach = self.base_view() + u32::from(self.profile.has(CapabilityTag::ARM));
            let extra = level.saturating_sub(reach);
            let (approach, cell) = self.approach(extra, |c| c.manhattan(target) <= 1);
            let Some((cell, dist)) = cell else {
                self.plan.unreachable = true;
                return;
            };
            self.move_to(cell, dist);
            self.rise(&approach);
            self.push(ActionCommand::Grasp(object.to_string()), GRASP_COST);
            self.carrying.insert(object.to_string());
        }
        let r = self.search(|c| region.contains(c));
        if let Some((cell, dist)) = self.pick(r) {
            self.move_to(cell, dist);
        }
    }

    fn door_goal(&mut self, door: Cell) {
        self.need(CapabilityTag::OPEN_DOOR);
        if matches!(self.view.terrain.get(door), Some(TerrainCell::Door { open: true })) {
            return;
        }
        let r = self.search(|c| c.manhattan(door) == 1);
        if let Some((cell, dist)) = self.pick(r) {
            self.move_to(cell, dist);
        }
        self.push(ActionCommand::OpenDoor(door), OPEN_DOOR_COST);
        self.open.insert(door);
    }

    fn robot_goal(&mut self, agent: &Option<AgentId>, region: Region) {
        if agent.as_ref().is_some_and(|a| a != &self.profile.id) {
            self.plan.foreign = true;
            return;
        }
        let r = self.search(|c| region.contains(c));
        if let Some((cell, dist)) = self.pick(r) {
            self.move_to(cell, dist);
        }
    }
}

/// Builds the action sequence `profile` would follow to satisfy `goals` on
/// `view`. Doors in `assume_open` are treated as open. Never fails: problems
/// are reported in the plan's flags, and the actions are what the robot
/// would attempt anyway.
pub fn plan_task(
    profile: &RobotProfile,
    status: &RobotStatus,
    goals: &[Predicate],
    view: &WorldState,
    assume_open: &BTreeSet<Cell>,
) -> TaskPlan {
    let mut b = Builder {
        profile,
        view,
        open: assume_open.clone(),
        pos: status.position,
        elev: status.elevation_level,
        found: view.found.clone(),
        carrying: view
            .objects
            .iter()
            .filter(|o| o.carried_by.as_ref() == Some(&profile.id))
            .map(|o| o.id.clone())
            .collect(),
        plan: TaskPlan::default(),
    };
    for goal in goals {
        match goal {
            Predicate::Found { kind, count } => b.found_goal(kind, *count),
            Predicate::ObjectAt { object, region } => b.object_goal(object, *region),
            Predicate::DoorOpen { cell } => b.door_goal(*cell),
            Predicate::RobotAt { agent, region } => b.robot_goal(agent, *region),
        }
    }
    b.plan
}

/// The robot's own feasibility check against its local view of the world:
/// capabilities first, then reachability, then battery. Returns the verdict
/// and the plan the robot would execute.
pub fn verify(profile: &RobotProfile, status: &RobotStatus, task: &TaskSpec, view: &WorldState) -> (Verdict, TaskPlan) {
    let mut plan = plan_task(profile, status, &task.goals, view, &BTreeSet::new());
    let mut needed = task.required_capabilities.clone();
    needed.extend(task.implied_capabilities());
    if !can_perform(profile, &needed) || !plan.missing.is_empty() || plan.foreign {
        return (
            Verdict::Reject {
                reason: RejectReason::MissingCapability,
            },
            plan,
        );
    }
    if plan.unreachable {
        return (
            Verdict::Reject {
                reason: RejectReason::NoTraversablePath,
            },
            plan,
        );
    }
    match simulate(profile, status, &plan.actions, view, &task.goals) {
        Some(cost) => plan.cost = cost,
        None => {
            return (
                Verdict::Reject {
                    reason: RejectReason::NoTraversablePath,
                },
                plan,
            )
        }
    }
    if plan.cost > usable_energy(profile, status) {
        return (
            Verdict::Reject {
                reason: RejectReason::InsufficientBattery,
            },
            plan,
        );
    }
    (Verdict::Accept, plan)
}

/// Runs `actions` instantly on a copy of `view` with unlimited energy.
/// Returns the energy used if every action succeeds and the goals hold.
fn simulate(
    profile: &RobotProfile,
    status: &RobotStatus,
    actions: &[ActionCommand],
    view: &WorldState,
    goals: &[Predicate],
) -> Option<u32> {
    let mut scratch = view.clone();
    let mut s = status.clone();
    s.energy = u32::MAX / 2;
    s.health = Health::Ok;
    scratch.robots.insert(profile.id.clone(), s);
    scratch.profiles.insert(profile.id.clone(), profile.clone());
    let mut spent = 0;
    for action in actions {
        spent += scratch.apply_instant(&profile.id, action).ok()?;
    }
    check_goal(&scratch, goals).ok().filter(|c| c.satisfied).map(|_| spent)
}

/// Cells on the planned legs whose true terrain the assistant had not seen.
/// They are removed from `unrevealed` and returned.
pub fn reveal_evidence(unrevealed: &mut BTreeMap<Cell, TerrainCell>, plan: &TaskPlan) -> Vec<Cell> {
    let mut out = Vec::new();
    for cell in plan.legs.iter().flatten() {
        if unrevealed.remove(cell).is_some() {
            out.push(*cell);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::TaskId;
    use crate::planner::TaskState;
    use crate::robot::tests::profile;
    use crate::world::{TerrainMap, WorldObject};

    fn task(goals: &[&str], requires: &[&str]) -> TaskSpec {
        TaskSpec {
            id: TaskId::new("t").unwrap(),
            description: String::new(),
            required_capabilities: requires.iter().map(|s| CapabilityTag::new(*s)).collect(),
            goals: goals.iter().map(|g| g.parse().unwrap()).collect(),
            state: TaskState::Assigned,
        }
    }

    fn world(rows: &[&str], objects: Vec<WorldObject>, robot: &RobotProfile, at: Cell) -> WorldState {
        let mut w = WorldState::new(TerrainMap::from_rows(rows).unwrap(), objects, 0);
        w.add_robot(robot.clone(), at);
        w
    }

    #[test]
    fn capable_charged_reachable_accepts() {
        let p = profile("R", RobotKind::Wheeled, &["camera"]);
        let w = world(
            &["....."],
            vec![WorldObject::new("a", "apple", Cell(4, 0), 0)],
            &p,
            Cell(0, 0),
        );
        let (v, plan) = verify(&p, &w.robots[&p.id], &task(&["found(apple, 1)"], &["camera"]), &w);
        assert_eq!(v, Verdict::Accept);
        assert_eq!(
            plan.actions,
            vec![
                ActionCommand::MoveTo(Cell(3, 0)),
                ActionCommand::Scan(Region::around(Cell(3, 0)))
            ]
        );
        assert_eq!(plan.cost, 3);
    }

    #[test]
    fn low_battery_rejects() {
        let mut p = profile("R", RobotKind::Wheeled, &["camera"]);
        p.battery_pct = 5.0;
        let row = ".".repeat(25);
        let w = world(
            &[row.as_str()],
            vec![WorldObject::new("a", "apple", Cell(21, 0), 0)],
            &p,
            Cell(0, 0),
        );
        let (v, plan) = verify(&p, &w.robots[&p.id], &task(&["found(apple, 1)"], &[]), &w);
        assert_eq!(plan.cost, 20);
        assert_eq!(
            v,
            Verdict::Reject {
                reason: RejectReason::InsufficientBattery
            }
        );
    }

    #[test]
    fn walled_region_rejects() {
        let p = profile("R", RobotKind::Wheeled, &["camera"]);
        let w = world(&["..#..", "..#.."], vec![], &p, Cell(0, 0));
        let (v, _) = verify(&p, &w.robots[&p.id], &task(&["robot_at(R, 4,0..4,1)"], &[]), &w);
        assert_eq!(
            v,
            Verdict::Reject {
                reason: RejectReason::NoTraversablePath
            }
        );
    }

    #[test]
    fn elevated_object_needs_jump_or_stairs() {
        let rover = profile("R", RobotKind::Wheeled, &["camera"]);
        let objects = vec![WorldObject::new("a", "apple", Cell(3, 0), 1)];
        let w = world(&["...T"], objects.clone(), &rover, Cell(0, 0));
        let (v, plan) = verify(
            &rover,
            &w.robots[&rover.id],
            &task(&["found(apple, 1)"], &["camera"]),
            &w,
        );
        assert_eq!(
            v,
            Verdict::Reject {
                reason: RejectReason::MissingCapability
            }
        );
        // The nominal plan still contains the jump the rover would try.
        assert!(plan.actions.contains(&ActionCommand::JumpUpward));

        let dog = profile("D", RobotKind::Legged, &["camera", "jump"]);
        let w = world(&["...T"], objects, &dog, Cell(0, 0));
        let (v, plan) = verify(&dog, &w.robots[&dog.id], &task(&["found(apple, 1)"], &["camera"]), &w);
        assert_eq!(v, Verdict::Accept);
        assert_eq!(
            plan.actions,
            vec![
                ActionCommand::MoveTo(Cell(2, 0)),
                ActionCommand::JumpUpward,
                ActionCommand::Scan(Region::around(Cell(2, 0)))
            ]
        );
    }

    #[test]
    fn fetch_plan_grasps_then_carries() {
        let p = profile("R", RobotKind::Wheeled, &["grasp"]);
        let w = world(
            &["....", "...."],
            vec![WorldObject::new("box", "box", Cell(3, 0), 0)],
            &p,
            Cell(0, 1),
        );
        let (v, plan) = verify(&p, &w.robots[&p.id], &task(&["object_at(box, 0,0)"], &[]), &w);
        assert_eq!(v, Verdict::Accept);
        assert_eq!(
            plan.actions,
            vec![
                ActionCommand::MoveTo(Cell(2, 0)),
                ActionCommand::Grasp("box".into()),
                ActionCommand::MoveTo(Cell(0, 0))
            ]
        );
    }

    #[test]
    fn assumed_open_door_changes_reachability() {
        let p = profile("R", RobotKind::Wheeled, &["camera"]);
        let w = world(&["..D.."], vec![], &p, Cell(0, 0));
        let goals: Vec<Predicate> = vec!["robot_at(R, 4,0)".parse().unwrap()];
        let closed = plan_task(&p, &w.robots[&p.id], &goals, &w, &BTreeSet::new());
        assert!(closed.unreachable);
        let open = plan_task(&p, &w.robots[&p.id], &goals, &w, &BTreeSet::from([Cell(2, 0)]));
        assert!(!open.unreachable);
        assert_eq!(open.cost, 4);
    }

    #[test]
    fn reserve_keeps_ten_percent() {
        let p = profile("R", RobotKind::Wheeled, &[]);
        let s = p.initial_status(Cell(0, 0));
        assert_eq!(usable_energy(&p, &s), 90);
    }
}
