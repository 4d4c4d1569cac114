//! Small grid mazes with a breadth-first shortest-path oracle.

use crate::error::{Result, WonnError};
use crate::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub type Cell = (usize, usize);

/// Neighbour order used by the oracle: up, down, left, right.
const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeInstance {
    pub h: usize,
    pub w: usize,
    /// Row-major, `true` for a wall.
    pub walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
    pub optimal_path: Vec<Cell>,
}

/// Where start and goal go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Two distinct random open cells.
    #[default]
    Random,
    /// Top-left to bottom-right, both forced open.
    Corners,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSpec {
    pub h: usize,
    pub w: usize,
    pub wall_density: f64,
    #[serde(default)]
    pub placement: Placement,
    /// Only keep mazes whose shortest path is unique, so the path mask is
    /// a well-defined target.
    #[serde(default = "yes")]
    pub unique_path: bool,
}

fn yes() -> bool {
    true
}

/// Regeneration attempts before giving up.
pub const MAZE_RETRIES: usize = 10_000;

fn neighbours(h: usize, w: usize, (r, c): Cell) -> impl Iterator<Item = Cell> {
    MOVES.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w).then_some((nr as usize, nc as usize))
    })
}

/// BFS distances from `from` through cells where `open` holds.
fn distances(h: usize, w: usize, open: &dyn Fn(usize) -> bool, from: Cell) -> Vec<Option<usize>> {
    let mut dist = vec![None; h * w];
    if !open(from.0 * w + from.1) {
        return dist;
    }
    dist[from.0 * w + from.1] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u.0 * w + u.1].unwrap();
        for v in neighbours(h, w, u) {
            let i = v.0 * w + v.1;
            if open(i) && dist[i].is_none() {
                dist[i] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn bfs_path(h: usize, w: usize, open: &dyn Fn(usize) -> bool, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    if !open(start.0 * w + start.1) || !open(goal.0 * w + goal.1) {
        return None;
    }
    let mut prev: Vec<Option<Cell>> = vec![None; h * w];
    let mut seen = vec![false; h * w];
    seen[start.0 * w + start.1] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        if u == goal {
            let mut path = vec![goal];
            while let Some(p) = prev[path.last().unwrap().0 * w + path.last().unwrap().1] {
                path.push(p);
            }
            path.reverse();
            return Some(path);
        }
        for v in neighbours(h, w, u) {
            let i = v.0 * w + v.1;
            if open(i) && !seen[i] {
                seen[i] = true;
                prev[i] = Some(u);
                queue.push_back(v);
            }
        }
    }
    None
}

/// Shortest start-to-goal path (inclusive of both ends), or `None` if the
/// goal is unreachable.
pub fn maze_oracle(walls: &[bool], h: usize, w: usize, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    if walls.len() != h * w || start.0 >= h || start.1 >= w || goal.0 >= h || goal.1 >= w {
        return None;
    }
    bfs_path(h, w, &|i| !walls[i], start, goal)
}

/// Number of cells lying on some shortest path.
fn shortest_path_cells(inst: &MazeInstance) -> usize {
    let open = |i: usize| !inst.walls[i];
    let ds = distances(inst.h, inst.w, &open, inst.start);
    let dg = distances(inst.h, inst.w, &open, inst.goal);
    let Some(total) = ds[inst.goal.0 * inst.w + inst.goal.1] else { return 0 };
    ds.iter().zip(&dg).filter(|(a, b)| matches!((a, b), (Some(x), Some(y)) if x + y == total)).count()
}

impl MazeInstance {
    pub fn is_open(&self, (r, c): Cell) -> bool {
        !self.walls[r * self.w + c]
    }

    /// Structural checks plus agreement with the oracle.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(WonnError::Generation(format!("invalid maze: {m}")));
        if self.walls.len() != self.h * self.w {
            return bad("wall grid size");
        }
        if self.start == self.goal {
            return bad("start equals goal");
        }
        if !self.is_open(self.start) || !self.is_open(self.goal) {
            return bad("start or goal is a wall");
        }
        if !path_is_valid(self, &self.optimal_path) {
            return bad("stored path is not a valid walk");
        }
        match maze_oracle(&self.walls, self.h, self.w, self.start, self.goal) {
            Some(p) if p.len() == self.optimal_path.len() => Ok(()),
            _ => bad("stored path is not shortest"),
        }
    }

    /// Binary mask of the stored optimal path.
    pub fn path_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.h * self.w];
        self.optimal_path.iter().for_each(|&(r, c)| m[r * self.w + c] = true);
        m
    }
}

/// A walk from start to goal through open cells with 4-neighbour moves.
pub fn path_is_valid(inst: &MazeInstance, path: &[Cell]) -> bool {
    path.first() == Some(&inst.start)
        && path.last() == Some(&inst.goal)
        && path.iter().all(|&c| c.0 < inst.h && c.1 < inst.w && inst.is_open(c))
        && path.windows(2).all(|p| p[0].0.abs_diff(p[1].0) + p[0].1.abs_diff(p[1].1) == 1)
}

/// Score a predicted path mask: it must contain no walls and consist of
/// exactly the cells of one shortest start-to-goal path.
pub fn mask_solves(inst: &MazeInstance, mask: &[bool]) -> bool {
    if mask.len() != inst.h * inst.w || mask.iter().zip(&inst.walls).any(|(m, wall)| *m && *wall) {
        return false;
    }
    let count = mask.iter().filter(|m| **m).count();
    if count != inst.optimal_path.len() {
        return false;
    }
    match bfs_path(inst.h, inst.w, &|i| mask[i], inst.start, inst.goal) {
        Some(p) => p.len() == count,
        None => false,
    }
}

/// Random maze; regenerated until solvable (and, if requested, with a
/// unique shortest path).
pub fn gen_maze(spec: &MazeSpec, seed: u64) -> Result<MazeInstance> {
    let MazeSpec { h, w, wall_density, placement, unique_path } = *spec;
    if h < 3 || w < 3 {
        return Err(WonnError::domain(format!("maze must be at least 3x3, got {h}x{w}")));
    }
    if !(0.0..1.0).contains(&wall_density) {
        return Err(WonnError::domain(format!("wall density must be in [0, 1), got {wall_density}")));
    }
    let mut rng = stream(seed, "maze");
    for _ in 0..MAZE_RETRIES {
        let mut walls: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(wall_density)).collect();
        let (start, goal) = match placement {
            Placement::Corners => {
                walls[0] = false;
                walls[h * w - 1] = false;
                ((0, 0), (h - 1, w - 1))
            }
            Placement::Random => {
                let open: Vec<Cell> = (0..h * w).filter(|&i| !walls[i]).map(|i| (i / w, i % w)).collect();
                if open.len() < 2 {
                    continue;
                }
                let pick: Vec<Cell> = open.choose_multiple(&mut rng, 2).copied().collect();
                (pick[0], pick[1])
            }
        };
        let Some(optimal_path) = maze_oracle(&walls, h, w, start, goal) else { continue };
        let inst = MazeInstance { h, w, walls, start, goal, optimal_path };
        if unique_path && shortest_path_cells(&inst) != inst.optimal_path.len() {
            continue;
        }
        return Ok(inst);
    }
    Err(WonnError::Generation(format!("no solvable {h}x{w} maze at density {wall_density} in {MAZE_RETRIES} tries")))
}

/// Apply one of the 8 symmetries of the square (requires `h == w` for the
/// transposing ones; other grids only use the 4 flips).
pub fn transform(inst: &MazeInstance, sym: usize) -> MazeInstance {
    let (h, w) = (inst.h, inst.w);
    let sym = if h == w { sym % 8 } else { sym % 4 };
    let map = |(r, c): Cell| -> Cell {
        let (r, c) = if sym & 4 != 0 { (c, r) } else { (r, c) };
        let r = if sym & 1 != 0 { h - 1 - r } else { r };
        let c = if sym & 2 != 0 { w - 1 - c } else { c };
        (r, c)
    };
    let mut walls = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = map((r, c));
            walls[nr * w + nc] = inst.walls[r * w + c];
        }
    }
    MazeInstance {
        h,
        w,
        walls,
        start: map(inst.start),
        goal: map(inst.goal),
        optimal_path: inst.optimal_path.iter().map(|&p| map(p)).collect(),
    }
}
