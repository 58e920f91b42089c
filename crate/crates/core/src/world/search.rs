//! Best-first (A*) search for the shortest joint action sequence that
//! satisfies every task goal of a scenario.
//!
//! One edge is one high-level action by one robot; a `MoveTo` is a single
//! edge whatever its length. Each robot's move targets are restricted to
//! cells where its own capabilities can act (beside objects, doors, stairs,
//! goal regions), which keeps the branching factor small without losing
//! optimal solutions. Battery levels are not part of the visited-state key;
//! a state is pruned only when one with the same positions and at least as
//! much energy for every robot was already reached.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use thiserror::Error;

use super::{check_goal, Predicate, Scenario, TerrainCell, WorldState};
use crate::ids::{AgentId, Cell};
use crate::robot::{ActionCommand, CapabilityTag, Region};

pub const DEFAULT_SEARCH_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("search budget exceeded after {0} states")]
    SearchBudgetExceeded(usize),
    #[error("no action sequence satisfies the goals ({0} states explored)")]
    Unsolvable(usize),
    #[error("goal references unknown entity: {0}")]
    Goal(String),
}

/// Joint state without battery levels; energy is handled by dominance.
#[derive(Clone, PartialEq, Eq, Hash)]
struct Key {
    robots: Vec<(Cell, u32)>,
    objects: Vec<(Cell, u32, Option<usize>)>,
    found: Vec<bool>,
    doors: Vec<bool>,
}

#[derive(Clone)]
struct Node {
    key: Key,
    energy: Vec<u32>,
}

struct Space<'a> {
    base: &'a WorldState,
    agents: Vec<AgentId>,
    door_cells: Vec<Cell>,
    targets: Vec<Vec<Cell>>,
}

impl Space<'_> {
    fn node(&self, w: &WorldState) -> Node {
        let key = Key {
            robots: self
                .agents
                .iter()
                .map(|a| {
                    let s = &w.robots[a];
                    (s.position, s.elevation_level)
                })
                .collect(),
            objects: w
                .objects
                .iter()
                .map(|o| {
                    let carrier = o
                        .carried_by
                        .as_ref()
                        .and_then(|c| self.agents.iter().position(|a| a == c));
                    (o.cell, o.level, carrier)
                })
                .collect(),
            found: w.objects.iter().map(|o| w.found.contains(&o.id)).collect(),
            doors: self
                .door_cells
                .iter()
                .map(|c| matches!(w.terrain.get(*c), Some(TerrainCell::Door { open: true })))
                .collect(),
        };
        let energy = self.agents.iter().map(|a| w.robots[a].energy).collect();
        Node { key, energy }
    }

    fn world(&self, node: &Node) -> WorldState {
        let mut w = self.base.clone();
        for ((agent, &(pos, elev)), &energy) in self.agents.iter().zip(&node.key.robots).zip(&node.energy) {
            let cap = w.profiles[agent].battery_capacity;
            let s = w.robots.get_mut(agent).expect("agent in world");
            s.position = pos;
            s.elevation_level = elev;
            s.energy = energy;
            s.battery_pct = crate::robot::pct(energy, cap);
        }
        for (obj, &(cell, level, carrier)) in w.objects.iter_mut().zip(&node.key.objects) {
            obj.cell = cell;
            obj.level = level;
            obj.carried_by = carrier.map(|i| self.agents[i].clone());
        }
        w.found = w
            .objects
            .iter()
            .zip(&node.key.found)
            .filter(|(_, f)| **f)
            .map(|(o, _)| o.id.clone())
            .collect();
        for (cell, &open) in self.door_cells.iter().zip(&node.key.doors) {
            w.terrain.set(*cell, TerrainCell::Door { open });
        }
        w
    }

    fn candidate_actions(&self, w: &WorldState, idx: usize) -> Vec<ActionCommand> {
        let agent = &self.agents[idx];
        let pos = w.robots[agent].position;
        let mut out: Vec<ActionCommand> = self.targets[idx]
            .iter()
            .filter(|t| **t != pos)
            .map(|t| ActionCommand::MoveTo(*t))
            .collect();
        out.extend([
            ActionCommand::JumpUpward,
            ActionCommand::ClimbUp,
            ActionCommand::ClimbDown,
        ]);
        out.extend(
            w.objects
                .iter()
                .filter(|o| o.cell.manhattan(pos) <= 1)
                .map(|o| ActionCommand::Grasp(o.id.clone())),
        );
        out.push(ActionCommand::Scan(Region::around(pos)));
        out.extend(
            self.door_cells
                .iter()
                .filter(|d| d.manhattan(pos) == 1)
                .map(|d| ActionCommand::OpenDoor(*d)),
        );
        out
    }
}

/// Keeps, per key, only (energy, depth) pairs no other stored pair
/// dominates: at least as much energy for every robot at no greater depth.
#[derive(Default)]
struct Frontier {
    seen: HashMap<Key, Vec<(Vec<u32>, u32)>>,
    states: usize,
}

impl Frontier {
    /// Records `node` at `depth`; false when an equal-or-better one is known.
    fn insert(&mut self, node: &Node, depth: u32) -> bool {
        let known = self.seen.entry(node.key.clone()).or_default();
        let covers =
            |(e, d): &(Vec<u32>, u32), (e2, d2): (&[u32], u32)| *d <= d2 && e2.iter().zip(e).all(|(x, y)| x <= y);
        if known.iter().any(|k| covers(k, (&node.energy, depth))) {
            return false;
        }
        let before = known.len();
        known.retain(|k| !covers(&(node.energy.clone(), depth), (&k.0, k.1)));
        self.states += 1;
        self.states -= before - known.len();
        known.push((node.energy.clone(), depth));
        true
    }
}

/// Lower bound on the actions still needed: one grasp per object that must
/// move and is not yet held, one carrying or positioning move if any
/// placement goal is open, one scan if any search goal is open, one
/// `open_door` per closed goal door, and the jumps or climbs the best-placed
/// robot still needs to see or reach the highest pending object. Each term
/// is lowered only by its own kind of action, by at most one, so the sum is
/// consistent.
fn remaining_bound(w: &WorldState, goals: &[Predicate]) -> u32 {
    let mut grasps = 0;
    let mut placement = false;
    let mut search = false;
    let mut doors = 0;
    let mut rise = 0;
    let shortfall =
        |level: u32, tag: &str, reach: &dyn Fn(&crate::robot::RobotProfile, &crate::robot::RobotStatus) -> u32| {
            w.robots
                .iter()
                .filter(|(a, _)| w.profiles[*a].has(tag))
                .map(|(a, s)| level.saturating_sub(reach(&w.profiles[a], s)))
                .min()
                .unwrap_or(0)
        };
    for g in goals {
        if g.holds(w).unwrap_or(false) {
            continue;
        }
        match g {
            Predicate::ObjectAt { object, .. } => {
                placement = true;
                if let Some(o) = w.object(object).filter(|o| o.carried_by.is_none()) {
                    grasps += 1;
                    rise = rise.max(shortfall(o.level, CapabilityTag::GRASP, &|p, s| p.reach_level(s)));
                }
            }
            Predicate::RobotAt { .. } => placement = true,
            Predicate::Found { kind, .. } => {
                search = true;
                let lowest = w
                    .objects
                    .iter()
                    .filter(|o| &o.kind == kind && !w.found.contains(&o.id))
                    .map(|o| o.level)
                    .min()
                    .unwrap_or(0);
                rise = rise.max(shortfall(lowest, CapabilityTag::CAMERA, &|p, s| p.view_level(s)));
            }
            Predicate::DoorOpen { .. } => doors += 1,
        }
    }
    grasps + u32::from(placement) + u32::from(search) + doors + rise
}

fn step(world: &WorldState, agent: &AgentId, action: &ActionCommand) -> Option<WorldState> {
    let mut w = world.clone();
    w.apply_instant(agent, action).ok()?;
    Some(w)
}

/// Cells worth stopping at for `agent`: any other destination is only ever
/// a waypoint, and a waypoint move can always be merged into the next move
/// for the same or lower cost.
fn targets_for(world: &WorldState, agent: &AgentId, goals: &[Predicate]) -> Vec<Cell> {
    let profile = &world.profiles[agent];
    let mut cells = BTreeSet::new();
    for o in &world.objects {
        if profile.has(CapabilityTag::GRASP) {
            cells.insert(o.cell);
            cells.extend(o.cell.neighbors4());
        }
        if profile.has(CapabilityTag::CAMERA) {
            cells.extend(Region::around(o.cell).cells());
        }
    }
    for (c, t) in world.terrain.cells() {
        match t {
            TerrainCell::Door { .. } if profile.has(CapabilityTag::OPEN_DOOR) => {
                cells.extend(c.neighbors4());
            }
            TerrainCell::Stairs if profile.has(CapabilityTag::CLIMB_STAIRS) => {
                cells.insert(c);
            }
            _ => {}
        }
    }
    for g in goals {
        match g {
            Predicate::ObjectAt { region, .. } if profile.has(CapabilityTag::GRASP) => {
                cells.extend(region.cells());
            }
            Predicate::RobotAt { agent: who, region } if who.as_ref().is_none_or(|a| a == agent) => {
                cells.extend(region.cells());
            }
            _ => {}
        }
    }
    cells.into_iter().filter(|c| world.terrain.in_bounds(*c)).collect()
}

/// Length of the shortest joint action sequence reaching all task goals on
/// the published map. Scheduled exceptions and hidden terrain are ignored.
pub fn min_steps(scenario: &Scenario, budget: usize) -> Result<u32, SearchError> {
    let goals: Vec<Predicate> = scenario.tasks.iter().flat_map(|t| t.goals.iter().cloned()).collect();
    let base = &scenario.world;
    let satisfied = |w: &WorldState| -> Result<bool, SearchError> {
        check_goal(w, &goals)
            .map(|c| c.satisfied)
            .map_err(|e| SearchError::Goal(e.to_string()))
    };
    if satisfied(base)? {
        return Ok(0);
    }
    let agents: Vec<AgentId> = base.robots.keys().cloned().collect();
    let space = Space {
        base,
        targets: agents.iter().map(|a| targets_for(base, a, &goals)).collect(),
        agents,
        door_cells: base
            .terrain
            .cells()
            .filter(|(_, t)| matches!(t, TerrainCell::Door { .. }))
            .map(|(c, _)| c)
            .collect(),
    };

    // A* over joint states; with a consistent bound the first goal state
    // popped is at minimal depth.
    let start = space.node(base);
    let mut frontier = Frontier::default();
    frontier.insert(&start, 0);
    let mut nodes = vec![(start, 0u32)];
    let mut open = BinaryHeap::new();
    open.push(Reverse((remaining_bound(base, &goals), Reverse(0u32), 0usize)));
    while let Some(Reverse((_, Reverse(depth), idx))) = open.pop() {
        let world = space.world(&nodes[idx].0);
        if satisfied(&world)? {
            return Ok(depth);
        }
        for (robot, agent) in space.agents.iter().enumerate() {
            for action in space.candidate_actions(&world, robot) {
                let Some(next) = step(&world, agent, &action) else {
                    continue;
                };
                let next_node = space.node(&next);
                if !frontier.insert(&next_node, depth + 1) {
                    continue;
                }
                if frontier.states > budget {
                    return Err(SearchError::SearchBudgetExceeded(frontier.states));
                }
                let f = depth + 1 + remaining_bound(&next, &goals);
                open.push(Reverse((f, Reverse(depth + 1), nodes.len())));
                nodes.push((next_node, depth + 1));
            }
        }
    }
    Err(SearchError::Unsolvable(frontier.states))
}
