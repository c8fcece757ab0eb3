//! Deterministic 2.5D kinematic maze navigation environment.
//!
//! Mazes are axis-aligned: thin walls, door rectangles that are solid
//! when closed, and block rectangles that are either never traversable
//! (High) or traversable while airborne (Low). The agent is a point
//! with a heading; movement uses axis-separated sliding so a blocked
//! axis component is zeroed while the other still applies.
//!
//! All functions here are pure over value types: the same inputs give
//! bit-identical outputs, including the seeded start/goal sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-thickness of a wall segment, meters. Kept above half the
/// per-axis step displacement so endpoint collision checks cannot
/// tunnel through a wall.
pub const WALL_HALF_THICKNESS: f64 = 0.16;

/// Observation vector length: position (2) + heading (2) + airborne
/// flag (1) + 8 ray distances.
pub const OBS_DIM: usize = 13;

/// Ray sensor range, meters.
pub const RAY_RANGE: f64 = 10.0;

pub type Point = [f64; 2];

/// Axis-aligned rectangle, `[x, y, w, h]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rect(pub [f64; 4]);

impl Rect {
    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn w(&self) -> f64 {
        self.0[2]
    }
    pub fn h(&self) -> f64 {
        self.0[3]
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x() && p[0] <= self.x() + self.w() && p[1] >= self.y() && p[1] <= self.y() + self.h()
    }

    /// Rectangle grown by `m` on every side.
    pub fn inflate(&self, m: f64) -> Rect {
        Rect([self.x() - m, self.y() - m, self.w() + 2.0 * m, self.h() + 2.0 * m])
    }

    /// Distance from the ray origin to this rectangle along `dir`
    /// (unit vector), if it hits within `max_t`. Slab method.
    pub fn ray_hit(&self, origin: Point, dir: Point, max_t: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = max_t;
        for axis in 0..2 {
            let lo = self.0[axis];
            let hi = self.0[axis] + self.0[axis + 2];
            if dir[axis].abs() < 1e-12 {
                if origin[axis] < lo || origin[axis] > hi {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[axis];
                let (mut a, mut b) = ((lo - origin[axis]) * inv, (hi - origin[axis]) * inv);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }

    /// True if the segment `a`-`b` intersects this rectangle.
    pub fn intersects_segment(&self, a: Point, b: Point) -> bool {
        if self.contains(a) || self.contains(b) {
            return true;
        }
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if len < 1e-12 {
            return false;
        }
        let dir = [d[0] / len, d[1] / len];
        self.ray_hit(a, dir, len).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MazeFamily {
    SimpleTown,
    AmazeVille,
}

impl MazeFamily {
    /// Subgoal horizon in environment steps: the offset between an
    /// observation and the achieved position used as its subgoal, and
    /// equally the lookahead the scripted expert steers toward so that
    /// demonstrated turns stay correlated with that subgoal.
    pub fn subgoal_horizon(self) -> usize {
        match self {
            MazeFamily::SimpleTown => 5,
            MazeFamily::AmazeVille => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightClass {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub rect: Rect,
    pub open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub rect: Rect,
    pub height: HeightClass,
}

/// A start or goal region: either a finite point set or one sampling
/// rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSet {
    Points { points: Vec<Point> },
    Rect { rect: Rect },
}

/// Declarative maze geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub name: String,
    pub family: MazeFamily,
    /// `[width, height]` in meters.
    pub extent: [f64; 2],
    /// Axis-aligned wall segments `[x1, y1, x2, y2]`.
    pub walls: Vec<[f64; 4]>,
    pub doors: Vec<Door>,
    pub blocks: Vec<Block>,
    pub start: SampleSet,
    pub goal: SampleSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    /// Position in meters.
    pub position: Point,
    /// Heading in `[-pi, pi)`.
    pub heading: f64,
    pub airborne_steps_left: u32,
    pub step_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub move_forward: bool,
    pub move_backward: bool,
    pub move_left: bool,
    pub move_right: bool,
    pub jump: bool,
    pub turn: f64,
}

impl Action {
    /// Round-trip encoding used by the dataset schema:
    /// `[f, b, l, r, j, turn]`.
    pub fn to_vec(&self) -> [f64; 6] {
        [
            self.move_forward as u8 as f64,
            self.move_backward as u8 as f64,
            self.move_left as u8 as f64,
            self.move_right as u8 as f64,
            self.jump as u8 as f64,
            self.turn,
        ]
    }

    pub fn from_vec(v: [f64; 6]) -> Action {
        Action {
            move_forward: v[0] != 0.0,
            move_backward: v[1] != 0.0,
            move_left: v[2] != 0.0,
            move_right: v[3] != 0.0,
            jump: v[4] != 0.0,
            turn: v[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub point: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Step duration, seconds.
    pub dt: f64,
    /// Movement speed, m/s.
    pub speed: f64,
    /// Turn rate at full stick, rad/s.
    pub turn_rate: f64,
    pub jump_duration_steps: u32,
    /// Goal-reach radius, meters.
    pub eps_goal: f64,
    pub max_steps: u32,
}

impl SimConfig {
    pub fn for_family(family: MazeFamily) -> SimConfig {
        SimConfig {
            dt: 0.1,
            speed: 3.0,
            turn_rate: std::f64::consts::PI,
            jump_duration_steps: 5,
            eps_goal: 1.0,
            max_steps: match family {
                MazeFamily::SimpleTown => 200,
                MazeFamily::AmazeVille => 500,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dt <= 0.0
            || self.speed <= 0.0
            || self.turn_rate <= 0.0
            || self.jump_duration_steps == 0
            || self.eps_goal <= 0.0
            || self.max_steps == 0
        {
            return Err(Error::validation("SimConfig fields must be strictly positive"));
        }
        Ok(())
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl MazeSpec {
    /// Every solid rectangle at ground level when not airborne:
    /// inflated walls, closed doors, high blocks, and (if `grounded`)
    /// low blocks.
    pub fn solid_rects(&self, grounded: bool) -> impl Iterator<Item = Rect> + '_ {
        let walls = self.walls.iter().map(|w| wall_rect(*w));
        let doors = self.doors.iter().filter(|d| !d.open).map(|d| d.rect);
        let blocks = self
            .blocks
            .iter()
            .filter(move |b| b.height == HeightClass::High || grounded)
            .map(|b| b.rect);
        walls.chain(doors).chain(blocks)
    }

    /// True if a point at ground level (or airborne) is inside closed
    /// geometry or outside the extent.
    pub fn is_blocked(&self, p: Point, airborne: bool) -> bool {
        if p[0] < 0.0 || p[1] < 0.0 || p[0] > self.extent[0] || p[1] > self.extent[1] {
            return true;
        }
        self.solid_rects(!airborne).any(|r| r.contains(p))
    }

    fn inside_low_block(&self, p: Point) -> bool {
        self.blocks
            .iter()
            .any(|b| b.height == HeightClass::Low && b.rect.contains(p))
    }

    /// Validates every `MazeSpec` invariant, returning the first
    /// violation by name.
    pub fn validate(&self) -> Result<()> {
        let want_extent = match self.family {
            MazeFamily::SimpleTown => [20.0, 20.0],
            MazeFamily::AmazeVille => [60.0, 60.0],
        };
        if self.extent != want_extent {
            return Err(Error::validation(format!(
                "extent invariant: {:?} family requires {:?}, got {:?}",
                self.family, want_extent, self.extent
            )));
        }
        let inside = |r: &Rect| {
            r.x() >= 0.0 && r.y() >= 0.0 && r.x() + r.w() <= self.extent[0] && r.y() + r.h() <= self.extent[1]
        };
        for (i, d) in self.doors.iter().enumerate() {
            if !inside(&d.rect) {
                return Err(Error::validation(format!(
                    "containment invariant: door {i} rectangle lies outside the extent"
                )));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !inside(&b.rect) {
                return Err(Error::validation(format!(
                    "containment invariant: block {i} rectangle lies outside the extent"
                )));
            }
        }
        self.validate_name()?;
        self.validate_connectivity()?;
        Ok(())
    }

    /// Naming convention: prefix S/A for the family; for non-BASE
    /// names the flag characters encode door open (O) / closed (X)
    /// states in listed order, and AmazeVille carries an H/L block
    /// flag before the door flags.
    fn validate_name(&self) -> Result<()> {
        let (prefix, rest) = match self.name.split_once('-') {
            Some(p) => p,
            None => return Err(Error::validation(format!("name invariant: '{}' lacks a family prefix", self.name))),
        };
        let want_prefix = match self.family {
            MazeFamily::SimpleTown => "S",
            MazeFamily::AmazeVille => "A",
        };
        if prefix != want_prefix {
            return Err(Error::validation(format!(
                "name invariant: '{}' does not start with '{}-'",
                self.name, want_prefix
            )));
        }
        if rest == "BASE" {
            return Ok(());
        }
        let mut flags = rest.chars();
        if self.family == MazeFamily::AmazeVille {
            let class = match flags.next() {
                Some('H') => HeightClass::High,
                Some('L') => HeightClass::Low,
                _ => {
                    return Err(Error::validation(format!(
                        "name invariant: '{}' lacks an H/L block flag",
                        self.name
                    )))
                }
            };
            if self.blocks.iter().any(|b| b.height != class) {
                return Err(Error::validation(format!(
                    "name invariant: '{}' block flag disagrees with block height classes",
                    self.name
                )));
            }
        }
        let door_flags: Vec<char> = flags.collect();
        if door_flags.len() != self.doors.len() {
            return Err(Error::validation(format!(
                "name invariant: '{}' has {} door flags but {} doors",
                self.name,
                door_flags.len(),
                self.doors.len()
            )));
        }
        for (i, (c, d)) in door_flags.iter().zip(&self.doors).enumerate() {
            let want = match c {
                'O' => true,
                'X' => false,
                _ => {
                    return Err(Error::validation(format!(
                        "name invariant: '{}' has invalid door flag '{c}'",
                        self.name
                    )))
                }
            };
            if d.open != want {
                return Err(Error::validation(format!(
                    "name invariant: '{}' door {i} open state disagrees with its flag",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Collision-free path (Low blocks allowed, as jumpable) from
    /// every representative start to every representative goal.
    fn validate_connectivity(&self) -> Result<()> {
        let grid = crate::planner::OccupancyGrid::build(self);
        for s in self.start.representatives() {
            for g in self.goal.representatives() {
                if crate::planner::plan_path(self, s, g).is_empty() && dist(s, g) > 1e-9 {
                    return Err(Error::validation(format!(
                        "connectivity invariant: no path from {s:?} to {g:?}"
                    )));
                }
            }
        }
        let _ = grid;
        Ok(())
    }
}

impl SampleSet {
    /// Deterministic representative points used by the connectivity
    /// check: all points of a finite set, or the center and inset
    /// corners of a rectangle.
    pub fn representatives(&self) -> Vec<Point> {
        match self {
            SampleSet::Points { points } => points.clone(),
            SampleSet::Rect { rect } => {
                let (x, y, w, h) = (rect.x(), rect.y(), rect.w(), rect.h());
                let m = 0.25f64.min(w / 4.0).min(h / 4.0);
                vec![
                    [x + w / 2.0, y + h / 2.0],
                    [x + m, y + m],
                    [x + w - m, y + m],
                    [x + m, y + h - m],
                    [x + w - m, y + h - m],
                ]
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        match self {
            SampleSet::Points { points } => points[rng.gen_range(0..points.len())],
            SampleSet::Rect { rect } => [
                rect.x() + rng.gen::<f64>() * rect.w(),
                rect.y() + rng.gen::<f64>() * rect.h(),
            ],
        }
    }
}

/// Converts an axis-aligned wall segment into its solid rectangle.
pub fn wall_rect(seg: [f64; 4]) -> Rect {
    let (x1, y1, x2, y2) = (seg[0], seg[1], seg[2], seg[3]);
    let (xa, xb) = (x1.min(x2), x1.max(x2));
    let (ya, yb) = (y1.min(y2), y1.max(y2));
    Rect([
        xa - WALL_HALF_THICKNESS,
        ya - WALL_HALF_THICKNESS,
        (xb - xa) + 2.0 * WALL_HALF_THICKNESS,
        (yb - ya) + 2.0 * WALL_HALF_THICKNESS,
    ])
}

/// Loads and validates a maze-spec file.
pub fn load_maze(path: &std::path::Path) -> Result<MazeSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_maze(&text)
}

/// Parses and validates maze-spec JSON.
pub fn parse_maze(text: &str) -> Result<MazeSpec> {
    let spec: MazeSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Samples a start state and goal, deterministically per seed.
pub fn reset(maze: &MazeSpec, config: &SimConfig, seed: u64) -> Result<(AgentState, Goal)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let start = maze.start.sample(&mut rng);
        let goal = maze.goal.sample(&mut rng);
        if maze.is_blocked(start, false) || maze.is_blocked(goal, false) {
            continue;
        }
        if dist(start, goal) <= config.eps_goal {
            continue;
        }
        let heading = wrap_angle(-std::f64::consts::PI + rng.gen::<f64>() * 2.0 * std::f64::consts::PI);
        return Ok((
            AgentState {
                position: start,
                heading,
                airborne_steps_left: 0,
                step_index: 0,
            },
            Goal { point: goal },
        ));
    }
    Err(Error::Sampling {
        attempts: 1000,
        reason: "no valid start/goal pair beyond eps_goal".into(),
    })
}

/// Builds the observation vector for a state: normalized position,
/// heading as (cos, sin), airborne flag, and 8 normalized ray
/// distances to ground-level solid geometry.
pub fn observe(maze: &MazeSpec, state: &AgentState) -> Observation {
    let mut v = Vec::with_capacity(OBS_DIM);
    v.push(state.position[0] / maze.extent[0]);
    v.push(state.position[1] / maze.extent[1]);
    v.push(state.heading.cos());
    v.push(state.heading.sin());
    v.push(if state.airborne_steps_left > 0 { 1.0 } else { 0.0 });
    let grounded = state.airborne_steps_left == 0;
    for k in 0..8 {
        let a = state.heading + (k as f64) * std::f64::consts::FRAC_PI_4;
        let dir = [a.cos(), a.sin()];
        let mut t = RAY_RANGE;
        // Extent boundary.
        for axis in 0..2 {
            if dir[axis] > 1e-12 {
                t = t.min((maze.extent[axis] - state.position[axis]) / dir[axis]);
            } else if dir[axis] < -1e-12 {
                t = t.min(-state.position[axis] / dir[axis]);
            }
        }
        for r in maze.solid_rects(grounded) {
            if let Some(hit) = r.ray_hit(state.position, dir, t) {
                t = t.min(hit);
            }
        }
        v.push(t.max(0.0) / RAY_RANGE);
    }
    Observation(v)
}

/// True iff the position is within `eps_goal` of the goal (closed
/// inequality).
pub fn check_success(state: &AgentState, goal: &Goal, eps_goal: f64) -> bool {
    dist(state.position, goal.point) <= eps_goal
}

/// Advances the simulation one step. Pure: identical inputs give
/// bit-identical outputs.
pub fn step(
    maze: &MazeSpec,
    config: &SimConfig,
    state: &AgentState,
    action: &Action,
    goal: &Goal,
) -> (AgentState, Observation, f64, bool) {
    let turn = if action.turn.is_finite() {
        action.turn.clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let heading = wrap_angle(state.heading + turn * config.turn_rate * config.dt);

    let mut airborne = state.airborne_steps_left;
    if action.jump && airborne == 0 {
        airborne = config.jump_duration_steps;
    }
    let in_air = airborne > 0;

    // Local move vector (forward axis, right axis), unit-normalized.
    let fwd = (action.move_forward as i8 - action.move_backward as i8) as f64;
    let right = (action.move_right as i8 - action.move_left as i8) as f64;
    let mut pos = state.position;
    let norm = (fwd * fwd + right * right).sqrt();
    if norm > 0.0 {
        let d = config.speed * config.dt;
        // Rotate (fwd, right) by the new heading; right is clockwise
        // of forward.
        let dx = d * (fwd * heading.cos() + right * heading.sin()) / norm;
        let dy = d * (fwd * heading.sin() - right * heading.cos()) / norm;
        // Axis-separated sliding: attempt x, then y; a blocked axis
        // component is zeroed.
        let try_x = [pos[0] + dx, pos[1]];
        if !maze.is_blocked(try_x, in_air) {
            pos = try_x;
        }
        let try_y = [pos[0], pos[1] + dy];
        if !maze.is_blocked(try_y, in_air) {
            pos = try_y;
        }
    }

    if airborne > 0 {
        airborne -= 1;
        // Cannot land inside a Low block: stay airborne until clear.
        if airborne == 0 && maze.inside_low_block(pos) {
            airborne = 1;
        }
    }

    let next = AgentState {
        position: pos,
        heading,
        airborne_steps_left: airborne,
        step_index: state.step_index + 1,
    };
    let reward = if check_success(&next, goal, config.eps_goal) { 1.0 } else { 0.0 };
    let done = reward == 1.0 || next.step_index >= config.max_steps;
    (next, observe(maze, &next), reward, done)
}

// ---------------------------------------------------------------------------
// Built-in mazes
// ---------------------------------------------------------------------------

fn boundary_walls(extent: [f64; 2]) -> Vec<[f64; 4]> {
    let (w, h) = (extent[0], extent[1]);
    vec![
        [0.0, 0.0, w, 0.0],
        [0.0, h, w, h],
        [0.0, 0.0, 0.0, h],
        [w, 0.0, w, h],
    ]
}

fn simpletown(name: &str, door_flags: Option<[bool; 3]>) -> MazeSpec {
    let mut walls = boundary_walls([20.0, 20.0]);
    let mut doors = Vec::new();
    if let Some(flags) = door_flags {
        // Central wall at y = 10 with three 2 m doorways.
        walls.push([0.0, 10.0, 2.5, 10.0]);
        walls.push([4.5, 10.0, 9.0, 10.0]);
        walls.push([11.0, 10.0, 15.5, 10.0]);
        walls.push([17.5, 10.0, 20.0, 10.0]);
        for (i, x) in [2.5, 9.0, 15.5].into_iter().enumerate() {
            doors.push(Door {
                rect: Rect([x, 9.8, 2.0, 0.4]),
                open: flags[i],
            });
        }
    }
    MazeSpec {
        name: name.to_string(),
        family: MazeFamily::SimpleTown,
        extent: [20.0, 20.0],
        walls,
        doors,
        blocks: Vec::new(),
        // Start on one side, goal on the other.
        start: SampleSet::Rect {
            rect: Rect([1.0, 1.0, 18.0, 2.5]),
        },
        goal: SampleSet::Rect {
            rect: Rect([1.0, 16.5, 18.0, 2.5]),
        },
    }
}

fn amazeville(name: &str, high: bool, door_flags: [bool; 3]) -> MazeSpec {
    let mut walls = boundary_walls([60.0, 60.0]);
    // Lower crossing wall at y = 20: door D1 at x in [8, 14], an
    // always-open gap at x in [46, 52].
    walls.push([0.0, 20.0, 8.0, 20.0]);
    walls.push([14.0, 20.0, 46.0, 20.0]);
    walls.push([52.0, 20.0, 60.0, 20.0]);
    // Upper crossing wall at y = 40: always-open gap at x in [8, 14],
    // door D2 at x in [46, 52].
    walls.push([0.0, 40.0, 8.0, 40.0]);
    walls.push([14.0, 40.0, 46.0, 40.0]);
    walls.push([52.0, 40.0, 60.0, 40.0]);
    // Middle divider at x = 30 with door D3 at y in [26, 34].
    walls.push([30.0, 20.0, 30.0, 26.0]);
    walls.push([30.0, 34.0, 30.0, 40.0]);
    let doors = vec![
        Door {
            rect: Rect([8.0, 19.8, 6.0, 0.4]),
            open: door_flags[0],
        },
        Door {
            rect: Rect([46.0, 39.8, 6.0, 0.4]),
            open: door_flags[1],
        },
        Door {
            rect: Rect([29.8, 26.0, 0.4, 8.0]),
            open: door_flags[2],
        },
    ];
    let height = if high { HeightClass::High } else { HeightClass::Low };
    // Two bars across the middle band; walkable gaps remain at the
    // extent edges and next to the divider.
    let blocks = vec![
        Block {
            rect: Rect([2.0, 29.0, 26.0, 0.9]),
            height,
        },
        Block {
            rect: Rect([32.0, 29.0, 26.0, 0.9]),
            height,
        },
    ];
    MazeSpec {
        name: name.to_string(),
        family: MazeFamily::AmazeVille,
        extent: [60.0, 60.0],
        walls,
        doors,
        blocks,
        start: SampleSet::Points {
            points: vec![[6.0, 6.0], [30.0, 4.0], [54.0, 6.0]],
        },
        goal: SampleSet::Points {
            points: vec![[6.0, 54.0], [30.0, 56.0], [54.0, 54.0]],
        },
    }
}

fn flags(s: &str) -> [bool; 3] {
    let b: Vec<bool> = s.chars().map(|c| c == 'O').collect();
    [b[0], b[1], b[2]]
}

/// The sixteen built-in mazes: eight SimpleTown and eight AmazeVille.
pub fn builtin_mazes() -> Vec<MazeSpec> {
    let mut out = vec![simpletown("S-BASE", None)];
    for f in ["OOO", "OOX", "OXO", "XOO", "XXO", "XOX", "OXX"] {
        out.push(simpletown(&format!("S-{f}"), Some(flags(f))));
    }
    for (h, f) in [
        (true, "OOO"),
        (true, "OOX"),
        (true, "XOO"),
        (true, "XOX"),
        (false, "OOO"),
        (false, "OOX"),
        (false, "XOO"),
        (false, "XOX"),
    ] {
        let prefix = if h { 'H' } else { 'L' };
        out.push(amazeville(&format!("A-{prefix}{f}"), h, flags(f)));
    }
    out
}

/// Looks up a built-in maze by name.
pub fn builtin_maze(name: &str) -> Result<MazeSpec> {
    builtin_mazes()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::Unknown {
            kind: "maze",
            name: name.to_string(),
            options: builtin_mazes().iter().map(|m| m.name.clone()).collect::<Vec<_>>().join(", "),
        })
}
