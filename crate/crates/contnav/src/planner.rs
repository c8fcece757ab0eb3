//! Grid planner for the scripted expert and for maze validation.
//!
//! A 0.5 m occupancy grid is built from the maze geometry: walls,
//! closed doors, and High blocks are impassable (with a clearance
//! margin so grid paths keep the agent off walls); Low-block cells
//! are traversable at doubled edge cost, modeling jump overhead.
//! Search is 4-connected A* with unit move cost.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::maze::{HeightClass, MazeSpec, Point, Rect};

/// Grid resolution, meters per cell.
pub const GRID_RES: f64 = 0.5;

/// Clearance margin around impassable geometry, meters.
pub const CLEARANCE: f64 = 0.3;

pub struct OccupancyGrid {
    pub nx: usize,
    pub ny: usize,
    pub res: f64,
    /// Impassable cells.
    pub blocked: Vec<bool>,
    /// Traversable Low-block cells (edge cost x2).
    pub low: Vec<bool>,
    origin: Point,
}

impl OccupancyGrid {
    pub fn build(maze: &MazeSpec) -> OccupancyGrid {
        let nx = (maze.extent[0] / GRID_RES).round() as usize;
        let ny = (maze.extent[1] / GRID_RES).round() as usize;
        let mut blocked = vec![false; nx * ny];
        let mut low = vec![false; nx * ny];
        let hard: Vec<Rect> = maze
            .walls
            .iter()
            .map(|w| crate::maze::wall_rect(*w).inflate(CLEARANCE))
            .chain(maze.doors.iter().filter(|d| !d.open).map(|d| d.rect.inflate(CLEARANCE)))
            .chain(
                maze.blocks
                    .iter()
                    .filter(|b| b.height == HeightClass::High)
                    .map(|b| b.rect.inflate(CLEARANCE)),
            )
            .collect();
        let lows: Vec<Rect> = maze
            .blocks
            .iter()
            .filter(|b| b.height == HeightClass::Low)
            .map(|b| b.rect)
            .collect();
        for j in 0..ny {
            for i in 0..nx {
                let c = [(i as f64 + 0.5) * GRID_RES, (j as f64 + 0.5) * GRID_RES];
                let idx = j * nx + i;
                blocked[idx] = hard.iter().any(|r| r.contains(c));
                low[idx] = lows.iter().any(|r| r.contains(c));
            }
        }
        OccupancyGrid {
            nx,
            ny,
            res: GRID_RES,
            blocked,
            low,
            origin: [0.0, 0.0],
        }
    }

    /// A blank grid, for tests.
    pub fn open(nx: usize, ny: usize) -> OccupancyGrid {
        OccupancyGrid {
            nx,
            ny,
            res: GRID_RES,
            blocked: vec![false; nx * ny],
            low: vec![false; nx * ny],
            origin: [0.0, 0.0],
        }
    }

    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p[0] - self.origin[0]) / self.res).floor() as isize;
        let j = ((p[1] - self.origin[1]) / self.res).floor() as isize;
        (
            i.clamp(0, self.nx as isize - 1) as usize,
            j.clamp(0, self.ny as isize - 1) as usize,
        )
    }

    pub fn center(&self, cell: (usize, usize)) -> Point {
        [
            self.origin[0] + (cell.0 as f64 + 0.5) * self.res,
            self.origin[1] + (cell.1 as f64 + 0.5) * self.res,
        ]
    }

    fn idx(&self, cell: (usize, usize)) -> usize {
        cell.1 * self.nx + cell.0
    }

    /// Nearest unblocked cell to `cell`, searching outward rings.
    pub fn nearest_free(&self, cell: (usize, usize)) -> Option<(usize, usize)> {
        if !self.blocked[self.idx(cell)] {
            return Some(cell);
        }
        for r in 1..(self.nx.max(self.ny)) {
            let r = r as isize;
            let mut best: Option<(usize, usize)> = None;
            for dj in -r..=r {
                for di in -r..=r {
                    if di.abs().max(dj.abs()) != r {
                        continue;
                    }
                    let (i, j) = (cell.0 as isize + di, cell.1 as isize + dj);
                    if i < 0 || j < 0 || i >= self.nx as isize || j >= self.ny as isize {
                        continue;
                    }
                    let c = (i as usize, j as usize);
                    if !self.blocked[self.idx(c)] && best.is_none() {
                        best = Some(c);
                    }
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// 4-connected A* from `start` to `goal`. Returns the cell path
    /// (inclusive of both ends) and its total edge cost, or `None`
    /// when disconnected. Deterministic tie-breaking.
    pub fn astar(&self, start: (usize, usize), goal: (usize, usize)) -> Option<(Vec<(usize, usize)>, u32)> {
        let n = self.nx * self.ny;
        if self.blocked[self.idx(start)] || self.blocked[self.idx(goal)] {
            return None;
        }
        let mut g = vec![u32::MAX; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        let h = |c: (usize, usize)| -> u32 {
            ((c.0 as isize - goal.0 as isize).unsigned_abs() + (c.1 as isize - goal.1 as isize).unsigned_abs()) as u32
        };
        let si = self.idx(start);
        g[si] = 0;
        heap.push(Reverse((h(start), 0u32, si)));
        while let Some(Reverse((_, gc, ci))) = heap.pop() {
            if gc > g[ci] {
                continue;
            }
            let cell = (ci % self.nx, ci / self.nx);
            if cell == goal {
                let mut path = vec![cell];
                let mut at = ci;
                while prev[at] != usize::MAX {
                    at = prev[at];
                    path.push((at % self.nx, at / self.nx));
                }
                path.reverse();
                return Some((path, gc));
            }
            for (di, dj) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let (i, j) = (cell.0 as isize + di, cell.1 as isize + dj);
                if i < 0 || j < 0 || i >= self.nx as isize || j >= self.ny as isize {
                    continue;
                }
                let ni = j as usize * self.nx + i as usize;
                if self.blocked[ni] {
                    continue;
                }
                let step_cost = if self.low[ni] { 2 } else { 1 };
                let ng = gc + step_cost;
                if ng < g[ni] {
                    g[ni] = ng;
                    prev[ni] = ci;
                    heap.push(Reverse((ng + h((i as usize, j as usize)), ng, ni)));
                }
            }
        }
        None
    }
}

/// True when the straight segment keeps clearance from walls, closed
/// doors, and High blocks. Low blocks are allowed (the expert jumps
/// them).
pub fn segment_clear(maze: &MazeSpec, a: Point, b: Point) -> bool {
    let hard: Vec<Rect> = maze
        .walls
        .iter()
        .map(|w| crate::maze::wall_rect(*w).inflate(CLEARANCE - 0.05))
        .chain(maze.doors.iter().filter(|d| !d.open).map(|d| d.rect.inflate(CLEARANCE - 0.05)))
        .chain(
            maze.blocks
                .iter()
                .filter(|bl| bl.height == HeightClass::High)
                .map(|bl| bl.rect.inflate(CLEARANCE - 0.05)),
        )
        .collect();
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let steps = (len / 0.1).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        if hard.iter().any(|r| r.contains(p)) {
            return false;
        }
    }
    true
}

/// Plans a waypoint path from `start` to `goal`; empty iff unreachable.
pub fn plan_path(maze: &MazeSpec, start: Point, goal: Point) -> Vec<Point> {
    let grid = OccupancyGrid::build(maze);
    let sc = match grid.nearest_free(grid.cell_of(start)) {
        Some(c) => c,
        None => return Vec::new(),
    };
    let gc = match grid.nearest_free(grid.cell_of(goal)) {
        Some(c) => c,
        None => return Vec::new(),
    };
    if sc == gc {
        return vec![goal];
    }
    let (cells, _) = match grid.astar(sc, gc) {
        Some(p) => p,
        None => return Vec::new(),
    };
    let mut raw: Vec<Point> = cells.iter().map(|c| grid.center(*c)).collect();
    *raw.last_mut().unwrap() = goal;
    // Line-of-sight smoothing: greedily skip to the farthest visible
    // waypoint.
    let mut out = Vec::new();
    let mut at = start;
    let mut i = 0usize;
    while i < raw.len() {
        let mut j = raw.len() - 1;
        while j > i && !segment_clear(maze, at, raw[j]) {
            j -= 1;
        }
        out.push(raw[j]);
        at = raw[j];
        i = j + 1;
    }
    out
}

/// Total A* edge cost between two points, for layout diagnostics.
pub fn plan_cost(maze: &MazeSpec, start: Point, goal: Point) -> Option<u32> {
    let grid = OccupancyGrid::build(maze);
    let sc = grid.nearest_free(grid.cell_of(start))?;
    let gc = grid.nearest_free(grid.cell_of(goal))?;
    grid.astar(sc, gc).map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Brute-force breadth-first search oracle for unit-cost grids.
    fn bfs_cost(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<u32> {
        let n = grid.nx * grid.ny;
        let mut seen = vec![false; n];
        let mut q = VecDeque::new();
        q.push_back((start, 0u32));
        seen[start.1 * grid.nx + start.0] = true;
        while let Some((c, d)) = q.pop_front() {
            if c == goal {
                return Some(d);
            }
            for (di, dj) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let (i, j) = (c.0 as isize + di, c.1 as isize + dj);
                if i < 0 || j < 0 || i >= grid.nx as isize || j >= grid.ny as isize {
                    continue;
                }
                let idx = j as usize * grid.nx + i as usize;
                if !seen[idx] && !grid.blocked[idx] {
                    seen[idx] = true;
                    q.push_back(((i as usize, j as usize), d + 1));
                }
            }
        }
        None
    }

    #[test]
    fn corner_to_corner_matches_bfs_oracle() {
        let grid = OccupancyGrid::open(3, 3);
        let (_, cost) = grid.astar((0, 0), (2, 2)).unwrap();
        assert_eq!(cost, 4);
        assert_eq!(bfs_cost(&grid, (0, 0), (2, 2)), Some(4));
    }

    #[test]
    fn astar_matches_bfs_on_random_unit_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut grid = OccupancyGrid::open(12, 12);
            for b in grid.blocked.iter_mut() {
                *b = rng.gen_bool(0.25);
            }
            grid.blocked[0] = false;
            let goal = (11, 11);
            grid.blocked[goal.1 * 12 + goal.0] = false;
            let astar = grid.astar((0, 0), goal).map(|(_, c)| c);
            assert_eq!(astar, bfs_cost(&grid, (0, 0), goal));
        }
    }

    #[test]
    fn start_equals_goal_cell_is_single_waypoint() {
        let m = crate::maze::builtin_maze("S-BASE").unwrap();
        let path = plan_path(&m, [5.1, 5.1], [5.2, 5.2]);
        assert_eq!(path, vec![[5.2, 5.2]]);
    }

    #[test]
    fn closed_door_with_no_corridor_is_unreachable() {
        // Seal every passage of the lower AmazeVille band.
        let mut m = crate::maze::builtin_maze("A-HXOX").unwrap();
        m.walls.push([46.0, 20.0, 52.0, 20.0]); // plug the open gap
        let path = plan_path(&m, [6.0, 6.0], [6.0, 54.0]);
        assert!(path.is_empty());
    }

    #[test]
    fn builtin_paths_exist_and_end_at_goal() {
        for m in crate::maze::builtin_mazes() {
            for s in m.start.representatives() {
                for g in m.goal.representatives() {
                    let p = plan_path(&m, s, g);
                    assert!(!p.is_empty(), "{}: no path {s:?} -> {g:?}", m.name);
                    assert_eq!(*p.last().unwrap(), g);
                }
            }
        }
    }
}
