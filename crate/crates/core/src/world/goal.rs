use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TerrainCell, WorldState};
use crate::ids::{AgentId, Cell};
use crate::robot::Region;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GoalError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
}

/// Goal predicate over the world.
///
/// Text forms: `object_at(apple1, 2,3..4,5)`, `door_open(3,4)`,
/// `robot_at(*, 1,1..2,2)`, `robot_at(Dog1, 3,3)`, `found(apple, 2)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Predicate {
    ObjectAt {
        object: String,
        region: Region,
    },
    DoorOpen {
        cell: Cell,
    },
    /// `agent: None` accepts any robot.
    RobotAt {
        agent: Option<AgentId>,
        region: Region,
    },
    Found {
        kind: String,
        count: u32,
    },
}

fn parse_cell(text: &str) -> Option<Cell> {
    let (x, y) = text.split_once(',')?;
    Some(Cell(x.trim().parse().ok()?, y.trim().parse().ok()?))
}

fn parse_region(text: &str) -> Option<Region> {
    match text.split_once("..") {
        Some((a, b)) => Some(Region::new(parse_cell(a)?, parse_cell(b)?)),
        None => parse_cell(text).map(Region::cell),
    }
}

impl FromStr for Predicate {
    type Err = GoalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || GoalError::UnknownPredicate(s.to_string());
        let trimmed = s.trim();
        let (name, rest) = trimmed.split_once('(').ok_or_else(unknown)?;
        let args = rest.strip_suffix(')').ok_or_else(unknown)?;
        let first_and_rest = || {
            args.split_once(',')
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(unknown)
        };
        match name.trim() {
            "object_at" => {
                let (object, region) = first_and_rest()?;
                if object.is_empty() {
                    return Err(unknown());
                }
                Ok(Predicate::ObjectAt {
                    object: object.to_string(),
                    region: parse_region(region).ok_or_else(unknown)?,
                })
            }
            "door_open" => Ok(Predicate::DoorOpen {
                cell: parse_cell(args).ok_or_else(unknown)?,
            }),
            "robot_at" => {
                let (agent, region) = first_and_rest()?;
                let agent = match agent {
                    "*" => None,
                    name => Some(AgentId::new(name).map_err(|_| unknown())?),
                };
                Ok(Predicate::RobotAt {
                    agent,
                    region: parse_region(region).ok_or_else(unknown)?,
                })
            }
            "found" => {
                let (kind, count) = first_and_rest()?;
                if kind.is_empty() {
                    return Err(unknown());
                }
                Ok(Predicate::Found {
                    kind: kind.to_string(),
                    count: count.parse().map_err(|_| unknown())?,
                })
            }
            _ => Err(unknown()),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::ObjectAt { object, region } => write!(f, "object_at({object}, {region})"),
            Predicate::DoorOpen { cell } => write!(f, "door_open({cell})"),
            Predicate::RobotAt { agent, region } => match agent {
                Some(a) => write!(f, "robot_at({a}, {region})"),
                None => write!(f, "robot_at(*, {region})"),
            },
            Predicate::Found { kind, count } => write!(f, "found({kind}, {count})"),
        }
    }
}

impl TryFrom<String> for Predicate {
    type Error = GoalError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Predicate> for String {
    fn from(p: Predicate) -> Self {
        p.to_string()
    }
}

impl Predicate {
    /// Evaluates against `world`. References to objects or robots that do not
    /// exist are reported, not treated as false.
    pub fn holds(&self, world: &WorldState) -> Result<bool, GoalError> {
        match self {
            Predicate::ObjectAt { object, region } => world
                .object(object)
                .map(|o| region.contains(o.cell))
                .ok_or_else(|| GoalError::UnknownPredicate(self.to_string())),
            Predicate::DoorOpen { cell } => match world.terrain.get(*cell) {
                Some(TerrainCell::Door { open }) => Ok(*open),
                _ => Err(GoalError::UnknownPredicate(self.to_string())),
            },
            Predicate::RobotAt { agent, region } => match agent {
                Some(a) => world
                    .robots
                    .get(a)
                    .map(|s| region.contains(s.position))
                    .ok_or_else(|| GoalError::UnknownPredicate(self.to_string())),
                None => Ok(world.robots.values().any(|s| region.contains(s.position))),
            },
            Predicate::Found { kind, count } => {
                let n = world
                    .objects
                    .iter()
                    .filter(|o| &o.kind == kind && world.found.contains(&o.id))
                    .count();
                Ok(n as u32 >= *count)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalCheck {
    pub satisfied: bool,
    pub per_predicate: Vec<bool>,
}

impl GoalCheck {
    /// Satisfied predicates over total (1.0 for an empty goal).
    pub fn fraction(&self) -> f64 {
        if self.per_predicate.is_empty() {
            1.0
        } else {
            self.per_predicate.iter().filter(|b| **b).count() as f64 / self.per_predicate.len() as f64
        }
    }
}

/// Conjunction of `goals` over `world`; pure.
pub fn check_goal(world: &WorldState, goals: &[Predicate]) -> Result<GoalCheck, GoalError> {
    let per_predicate = goals.iter().map(|g| g.holds(world)).collect::<Result<Vec<_>, _>>()?;
    Ok(GoalCheck {
        satisfied: per_predicate.iter().all(|b| *b),
        per_predicate,
    })
}
