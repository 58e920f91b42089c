use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ids::Cell;
use crate::robot::{RobotKind, RobotProfile, TerrainKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainCell {
    Flat,
    Rough,
    Stairs,
    Obstacle,
    Table { level: u32 },
    Door { open: bool },
}

impl TerrainCell {
    /// Map glyphs: `.` flat, `~` rough, `S` stairs, `#` obstacle,
    /// `T` table (level 1), `H` high table (level 2), `D`/`d` closed/open door.
    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => TerrainCell::Flat,
            '~' => TerrainCell::Rough,
            'S' => TerrainCell::Stairs,
            '#' => TerrainCell::Obstacle,
            'T' => TerrainCell::Table { level: 1 },
            'H' => TerrainCell::Table { level: 2 },
            'D' => TerrainCell::Door { open: false },
            'd' => TerrainCell::Door { open: true },
            _ => return None,
        })
    }

    pub fn to_char(self) -> char {
        match self {
            TerrainCell::Flat => '.',
            TerrainCell::Rough => '~',
            TerrainCell::Stairs => 'S',
            TerrainCell::Obstacle => '#',
            TerrainCell::Table { level } if level <= 1 => 'T',
            TerrainCell::Table { .. } => 'H',
            TerrainCell::Door { open: false } => 'D',
            TerrainCell::Door { open: true } => 'd',
        }
    }

    /// Whether a robot with `profile` may enter this cell. Obstacles stop
    /// every ground robot; closed doors stop everyone.
    pub fn passable_for(self, profile: &RobotProfile) -> bool {
        let t = &profile.traversable;
        match self {
            TerrainCell::Flat => t.contains(&TerrainKind::Flat),
            TerrainCell::Rough => t.contains(&TerrainKind::Rough),
            TerrainCell::Stairs => t.contains(&TerrainKind::Stairs),
            TerrainCell::Table { .. } => t.contains(&TerrainKind::Table),
            TerrainCell::Obstacle => profile.kind == RobotKind::Aerial,
            TerrainCell::Door { open } => open && t.contains(&TerrainKind::Flat),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TerrainMap {
    width: u32,
    height: u32,
    cells: Vec<TerrainCell>,
}

impl TerrainMap {
    pub fn filled(width: u32, height: u32, cell: TerrainCell) -> Self {
        Self {
            width,
            height,
            cells: vec![cell; (width * height) as usize],
        }
    }

    /// Parses glyph rows, top row first (y = 0).
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, String> {
        let height = rows.len();
        if height == 0 {
            return Err("map has no rows".into());
        }
        let width = rows[0].as_ref().chars().count();
        if width == 0 {
            return Err("map rows are empty".into());
        }
        let mut cells = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != width {
                return Err(format!("row {y} has {} cells, expected {width}", row.chars().count()));
            }
            for (x, c) in row.chars().enumerate() {
                cells.push(TerrainCell::from_char(c).ok_or_else(|| format!("unknown terrain glyph `{c}` at {x},{y}"))?);
            }
        }
        Ok(Self {
            width: width as u32,
            height: height as u32,
            cells,
        })
    }

    pub fn to_rows(&self) -> Vec<String> {
        self.cells
            .chunks(self.width as usize)
            .map(|row| row.iter().map(|c| c.to_char()).collect())
            .collect()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && (c.0 as u32) < self.width && (c.1 as u32) < self.height
    }

    fn index(&self, c: Cell) -> Option<usize> {
        self.in_bounds(c)
            .then(|| c.1 as usize * self.width as usize + c.0 as usize)
    }

    pub fn get(&self, c: Cell) -> Option<&TerrainCell> {
        self.index(c).map(|i| &self.cells[i])
    }

    pub fn set(&mut self, c: Cell, cell: TerrainCell) {
        if let Some(i) = self.index(c) {
            self.cells[i] = cell;
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, TerrainCell)> + '_ {
        let w = self.width as usize;
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, t)| (Cell((i % w) as i32, (i / w) as i32), *t))
    }

    pub fn passable(&self, c: Cell, profile: &RobotProfile) -> bool {
        self.get(c).is_some_and(|t| t.passable_for(profile))
    }

    pub fn shortest_path(&self, from: Cell, to: Cell, profile: &RobotProfile) -> Option<Vec<Cell>> {
        self.bfs_path(from, to, |c| self.passable(c, profile))
    }

    /// Shortest 4-connected path from `from` to `to` through cells accepted
    /// by `passable`. The start cell is never tested. Neighbour order is
    /// fixed, so ties resolve deterministically.
    pub fn bfs_path(&self, from: Cell, to: Cell, passable: impl Fn(Cell) -> bool) -> Option<Vec<Cell>> {
        if from == to {
            return Some(Vec::new());
        }
        let start = self.index(from)?;
        let goal = self.index(to)?;
        let mut parent: Vec<Option<usize>> = vec![None; self.cells.len()];
        let mut seen = vec![false; self.cells.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let ci = self.index(c).expect("queued cells are in bounds");
            for n in c.neighbors4() {
                let Some(ni) = self.index(n) else { continue };
                if seen[ni] || !passable(n) {
                    continue;
                }
                seen[ni] = true;
                parent[ni] = Some(ci);
                if ni == goal {
                    let mut path = vec![n];
                    let mut cur = ci;
                    while cur != start {
                        path.push(self.cell_at(cur));
                        cur = parent[cur].expect("every visited cell except start has a parent");
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(n);
            }
        }
        None
    }

    /// BFS distance from `from` to every cell (`None` when unreachable).
    pub fn bfs_distances(&self, from: Cell, passable: impl Fn(Cell) -> bool) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.cells.len()];
        let Some(start) = self.index(from) else { return dist };
        dist[start] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c).expect("in bounds")].expect("queued cells have a distance");
            for n in c.neighbors4() {
                let Some(ni) = self.index(n) else { continue };
                if dist[ni].is_none() && passable(n) {
                    dist[ni] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn distance_in(&self, field: &[Option<u32>], c: Cell) -> Option<u32> {
        self.index(c).and_then(|i| field[i])
    }

    fn cell_at(&self, i: usize) -> Cell {
        let w = self.width as usize;
        Cell((i % w) as i32, (i / w) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyph_round_trip() {
        let rows = [".~S#", "THDd"];
        let m = TerrainMap::from_rows(&rows).unwrap();
        assert_eq!(m.to_rows(), rows);
        assert_eq!(m.get(Cell(1, 1)), Some(&TerrainCell::Table { level: 2 }));
        assert!(TerrainMap::from_rows(&["..", "."]).is_err());
        assert!(TerrainMap::from_rows(&[".x"]).is_err());
    }

    #[test]
    fn distances_match_path_lengths() {
        let m = TerrainMap::from_rows(&["....", ".##.", "...."]).unwrap();
        let open = |c: Cell| m.get(c) == Some(&TerrainCell::Flat);
        let field = m.bfs_distances(Cell(0, 0), open);
        for (c, _) in m.cells() {
            let by_path = m.bfs_path(Cell(0, 0), c, open).map(|p| p.len() as u32);
            assert_eq!(
                m.distance_in(&field, c),
                if open(c) || c == Cell(0, 0) { by_path } else { None }
            );
        }
    }
}
