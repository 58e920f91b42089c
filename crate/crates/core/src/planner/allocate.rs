use std::collections::BTreeSet;

use super::{plan_task, usable_energy, TaskSpec};
use crate::ids::{AgentId, Cell, TaskId};
use crate::robot::{can_perform, RobotProfile, RobotStatus};
use crate::world::WorldState;

/// Largest side for which the optimal assignment is found by exhaustive
/// search; larger instances fall back to greedy matching.
pub const EXHAUSTIVE_LIMIT: usize = 6;

/// `costs[task][robot]`; `None` marks an infeasible pair.
pub type CostMatrix = Vec<Vec<Option<u32>>>;

pub struct AllocationInput<'a> {
    /// Tasks to place, in a fixed order.
    pub tasks: &'a [TaskSpec],
    /// The assistant's view: believed terrain plus last reported statuses.
    pub view: &'a WorldState,
    /// Robots that may take work, ascending.
    pub candidates: &'a [AgentId],
    /// Robots already working; they count for feasibility but take nothing.
    pub busy: &'a BTreeSet<AgentId>,
    /// Doors the plan may treat as open because another task opens them.
    pub assume_open: &'a BTreeSet<Cell>,
    /// Pairs that must never be proposed again.
    pub exclusions: &'a BTreeSet<(TaskId, AgentId)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Allocation {
    /// `(task, agent, estimated cost)` in task order.
    pub assignments: Vec<(TaskId, AgentId, u32)>,
    /// Tasks no candidate robot, busy or not, can take.
    pub unassignable: Vec<TaskId>,
}

/// Estimated energy for `profile` to carry out `task`, or `None` when the
/// pair is infeasible as far as the assistant can tell: a declared
/// capability is missing, the route is blocked, or the battery is short.
pub fn estimate_cost(
    profile: &RobotProfile,
    status: &RobotStatus,
    task: &TaskSpec,
    view: &WorldState,
    assume_open: &BTreeSet<Cell>,
) -> Option<u32> {
    if !status.health.is_ok() || !can_perform(profile, &task.required_capabilities) {
        return None;
    }
    let plan = plan_task(profile, status, &task.goals, view, assume_open);
    if plan.unreachable || plan.foreign || plan.cost > usable_energy(profile, status) {
        return None;
    }
    Some(plan.cost)
}

/// Minimum-cost matching of tasks to robots, maximising the number of tasks
/// placed first. Ties go to the lexicographically smallest robot choice in
/// task order.
pub fn assign_min_cost(costs: &CostMatrix) -> Vec<Option<usize>> {
    let robots = costs.first().map_or(0, Vec::len);
    if costs.len() <= EXHAUSTIVE_LIMIT && robots <= EXHAUSTIVE_LIMIT {
        exhaustive(costs, robots)
    } else {
        greedy(costs, robots)
    }
}

struct Best {
    count: usize,
    cost: u64,
    choice: Vec<Option<usize>>,
}

fn exhaustive(costs: &CostMatrix, robots: usize) -> Vec<Option<usize>> {
    fn go(
        costs: &CostMatrix,
        t: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        count: usize,
        cost: u64,
        best: &mut Best,
    ) {
        if t == costs.len() {
            if count > best.count || (count == best.count && cost < best.cost) {
                *best = Best {
                    count,
                    cost,
                    choice: cur.clone(),
                };
            }
            return;
        }
        for r in 0..used.len() {
            if let (false, Some(c)) = (used[r], costs[t][r]) {
                used[r] = true;
                cur.push(Some(r));
                go(costs, t + 1, used, cur, count + 1, cost + u64::from(c), best);
                cur.pop();
                used[r] = false;
            }
        }
        cur.push(None);
        go(costs, t + 1, used, cur, count, cost, best);
        cur.pop();
    }
    let mut best = Best {
        count: 0,
        cost: u64::MAX,
        choice: vec![None; costs.len()],
    };
    go(costs, 0, &mut vec![false; robots], &mut Vec::new(), 0, 0, &mut best);
    best.choice
}

fn greedy(costs: &CostMatrix, robots: usize) -> Vec<Option<usize>> {
    let mut pairs: Vec<(u32, usize, usize)> = Vec::new();
    for (t, row) in costs.iter().enumerate() {
        for (r, c) in row.iter().enumerate() {
            if let Some(c) = c {
                pairs.push((*c, r, t));
            }
        }
    }
    pairs.sort_unstable();
    let mut out = vec![None; costs.len()];
    let mut used = vec![false; robots];
    for (_, r, t) in pairs {
        if out[t].is_none() && !used[r] {
            out[t] = Some(r);
            used[r] = true;
        }
    }
    out
}

/// Rule-based allocation over the assistant's view.
pub fn allocate(input: &AllocationInput<'_>) -> Allocation {
    let view = input.view;
    let cost_of = |task: &TaskSpec, agent: &AgentId| -> Option<u32> {
        if input.exclusions.contains(&(task.id.clone(), agent.clone())) {
            return None;
        }
        let profile = view.profiles.get(agent)?;
        let status = view.robots.get(agent)?;
        estimate_cost(profile, status, task, view, input.assume_open)
    };

    let mut unassignable = Vec::new();
    let free: Vec<&AgentId> = input.candidates.iter().filter(|a| !input.busy.contains(*a)).collect();
    let mut costs: CostMatrix = Vec::new();
    for task in input.tasks {
        let row: Vec<Option<u32>> = free.iter().map(|a| cost_of(task, a)).collect();
        let busy_can = input.candidates.iter().filter(|a| input.busy.contains(*a)).any(|a| {
            // A busy robot could take the task later from where it is
            // now; ignore battery and position for this check.
            !input.exclusions.contains(&(task.id.clone(), a.clone()))
                && view
                    .profiles
                    .get(a)
                    .is_some_and(|p| can_perform(p, &task.required_capabilities))
        });
        if row.iter().all(Option::is_none) && !busy_can {
            unassignable.push(task.id.clone());
        }
        costs.push(row);
    }
    let choice = assign_min_cost(&costs);
    let assignments = input
        .tasks
        .iter()
        .zip(choice)
        .filter_map(|(task, r)| {
            let r = r?;
            Some((task.id.clone(), free[r].clone(), costs_at(&costs, task, input.tasks, r)))
        })
        .collect();
    Allocation {
        assignments,
        unassignable,
    }
}

fn costs_at(costs: &CostMatrix, task: &TaskSpec, tasks: &[TaskSpec], r: usize) -> u32 {
    let t = tasks.iter().position(|x| x.id == task.id).expect("task in list");
    costs[t][r].expect("chosen pairs are feasible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::TaskState;
    use crate::robot::tests::profile;
    use crate::robot::{CapabilityTag, RobotKind, TerrainKind};
    use crate::world::{TerrainMap, WorldObject};
    use itertools::Itertools;
    use proptest::prelude::*;

    fn brute_force(costs: &CostMatrix) -> (usize, u64) {
        let tasks = costs.len();
        let robots = costs.first().map_or(0, Vec::len);
        let mut best = (0usize, 0u64);
        // Every injective partial map task -> robot, as a permutation of
        // robots padded with "none" slots.
        let slots: Vec<Option<usize>> = (0..robots).map(Some).chain((0..tasks).map(|_| None)).collect();
        for perm in slots.iter().permutations(tasks) {
            let mut count = 0;
            let mut cost = 0u64;
            let mut ok = true;
            for (t, r) in perm.iter().enumerate() {
                if let Some(r) = r {
                    match costs[t][*r] {
                        Some(c) => {
                            count += 1;
                            cost += u64::from(c);
                        }
                        None => ok = false,
                    }
                }
            }
            if ok && (count > best.0 || (count == best.0 && cost < best.1)) {
                best = (count, cost);
            }
        }
        best
    }

    fn evaluate(costs: &CostMatrix, choice: &[Option<usize>]) -> (usize, u64) {
        let mut seen = BTreeSet::new();
        let mut cost = 0;
        for (t, r) in choice.iter().enumerate() {
            if let Some(r) = r {
                assert!(seen.insert(*r), "robot used twice");
                cost += u64::from(costs[t][*r].expect("chosen pair feasible"));
            }
        }
        (seen.len(), cost)
    }

    fn matrix() -> impl Strategy<Value = CostMatrix> {
        (1usize..=4, 1usize..=4).prop_flat_map(|(t, r)| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::option::weighted(0.8, 0u32..30), r),
                t,
            )
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(costs in matrix()) {
            let choice = assign_min_cost(&costs);
            prop_assert_eq!(evaluate(&costs, &choice), brute_force(&costs));
        }
    }

    #[test]
    fn greedy_above_limit_is_valid() {
        let costs: CostMatrix = (0..8)
            .map(|t| (0..8).map(|r| Some((t * 7 + r * 3) % 11)).collect())
            .collect();
        let choice = assign_min_cost(&costs);
        assert_eq!(evaluate(&costs, &choice).0, 8);
    }

    fn task(id: &str, goals: &[&str], requires: &[&str]) -> TaskSpec {
        TaskSpec {
            id: TaskId::new(id).unwrap(),
            description: String::new(),
            required_capabilities: requires.iter().map(|s| CapabilityTag::new(*s)).collect(),
            goals: goals.iter().map(|g| g.parse().unwrap()).collect(),
            state: TaskState::Pending,
        }
    }

    fn run(view: &WorldState, tasks: &[TaskSpec]) -> Allocation {
        let candidates: Vec<AgentId> = view.robots.keys().cloned().collect();
        allocate(&AllocationInput {
            tasks,
            view,
            candidates: &candidates,
            busy: &BTreeSet::new(),
            assume_open: &BTreeSet::new(),
            exclusions: &BTreeSet::new(),
        })
    }

    #[test]
    fn single_capable_robot_is_forced() {
        let mut w = WorldState::new(TerrainMap::from_rows(&["...."]).unwrap(), vec![], 0);
        w.add_robot(profile("R1", RobotKind::Wheeled, &["camera"]), Cell(0, 0));
        let a = run(&w, &[task("go", &["robot_at(*, 3,0)"], &[])]);
        assert_eq!(
            a.assignments,
            vec![(TaskId::new("go").unwrap(), AgentId::new("R1").unwrap(), 3)]
        );
    }

    #[test]
    fn stairs_task_with_wheeled_roster_is_unassignable() {
        let mut w = WorldState::new(TerrainMap::from_rows(&["..S."]).unwrap(), vec![], 0);
        w.add_robot(profile("R1", RobotKind::Wheeled, &["wheeled"]), Cell(0, 0));
        w.add_robot(profile("R2", RobotKind::Wheeled, &["wheeled"]), Cell(1, 0));
        let a = run(&w, &[task("upstairs", &["robot_at(*, 2,0)"], &["climb_stairs"])]);
        assert!(a.assignments.is_empty());
        assert_eq!(a.unassignable, vec![TaskId::new("upstairs").unwrap()]);
    }

    /// Fast rover scans the open floor, the big rover clears the blockage,
    /// the legged robot searches the tables.
    #[test]
    fn heterogeneous_team_split() {
        let rows = ["..........", "..........", "...T..T...", ".........."];
        let mut w = WorldState::new(
            TerrainMap::from_rows(&rows).unwrap(),
            vec![
                WorldObject::new("apple_floor", "apple", Cell(9, 0), 0),
                WorldObject::new("debris", "debris", Cell(8, 3), 0),
                WorldObject::new("apple_table", "apple_t", Cell(3, 2), 1),
            ],
            0,
        );
        let mut small = profile("SmallRover", RobotKind::Wheeled, &["wheeled", "camera"]);
        small.max_speed = 3;
        let big = profile("BigRover", RobotKind::Wheeled, &["wheeled", "camera", "grasp", "arm"]);
        let mut dog = profile("Dog", RobotKind::Legged, &["legged", "camera", "jump"]);
        dog.traversable = [TerrainKind::Flat, TerrainKind::Rough].into();
        w.add_robot(small, Cell(5, 0));
        w.add_robot(big, Cell(5, 1));
        w.add_robot(dog, Cell(5, 2));
        let tasks = [
            task("scan_floor", &["found(apple, 1)"], &["camera"]),
            task("clear_debris", &["object_at(debris, 0,3)"], &["grasp"]),
            task("search_tables", &["found(apple_t, 1)"], &["jump"]),
        ];
        let a = run(&w, &tasks);
        let pairs: Vec<(&str, &str)> = a.assignments.iter().map(|(t, r, _)| (t.as_str(), r.as_str())).collect();
        assert_eq!(
            pairs,
            vec![
                ("scan_floor", "SmallRover"),
                ("clear_debris", "BigRover"),
                ("search_tables", "Dog")
            ]
        );
    }
}
