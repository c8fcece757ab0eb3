//! Offline datasets: scripted-expert generation, storage, and batch
//! sampling with hindsight goal relabeling.
//!
//! The expert plans with A* over the occupancy grid and follows the
//! smoothed waypoints with proportional heading control, jumping when
//! a Low block lies on the segment ahead. Per-episode seeds derive
//! from the dataset seed xor the episode index, so generation is
//! embarrassingly parallel and byte-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::exec;
use crate::maze::{
    self, Action, AgentState, Goal, HeightClass, MazeSpec, Observation, Point, SimConfig,
};

pub use crate::planner::plan_path;

/// Waypoint-reached radius for the expert, meters.
const WAYPOINT_RADIUS: f64 = 0.7;

/// Replan when the agent has moved less than this over the window.
const STUCK_DISTANCE: f64 = 0.3;
const STUCK_WINDOW: u32 = 40;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    /// Goal projection of the next state.
    pub achieved_point: Point,
    pub goal: Goal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub maze_name: String,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    ScriptedExpert,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub sim: SimConfig,
    pub noise: f64,
    pub seed: u64,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub maze_name: String,
    pub episodes: Vec<Episode>,
    pub generator: Generator,
    pub config: DatasetConfig,
}

/// Paper-matched episode counts per maze family.
pub fn default_episodes(family: maze::MazeFamily) -> usize {
    match family {
        maze::MazeFamily::SimpleTown => 250,
        maze::MazeFamily::AmazeVille => 100,
    }
}

impl Dataset {
    pub fn total_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    /// Validates the chaining, reward-consistency, and terminal-reward
    /// invariants of every episode.
    pub fn validate(&self) -> Result<()> {
        for (ei, ep) in self.episodes.iter().enumerate() {
            if ep.maze_name != self.maze_name {
                return Err(Error::validation(format!(
                    "episode {ei}: maze_name '{}' differs from dataset '{}'",
                    ep.maze_name, self.maze_name
                )));
            }
            for (t, w) in ep.transitions.windows(2).enumerate() {
                if w[0].next_obs != w[1].obs {
                    return Err(Error::validation(format!(
                        "episode {ei}: chaining invariant broken at step {t}"
                    )));
                }
            }
            for (t, tr) in ep.transitions.iter().enumerate() {
                let d = ((tr.achieved_point[0] - tr.goal.point[0]).powi(2)
                    + (tr.achieved_point[1] - tr.goal.point[1]).powi(2))
                .sqrt();
                let want = if d <= self.config.sim.eps_goal { 1.0 } else { 0.0 };
                if tr.reward != want {
                    return Err(Error::validation(format!(
                        "episode {ei}: reward inconsistent with eps_goal at step {t}"
                    )));
                }
                if tr.reward == 1.0 && t + 1 != ep.transitions.len() {
                    return Err(Error::validation(format!(
                        "episode {ei}: reward 1 at non-terminal step {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pure-pursuit target on a waypoint polyline: projects `pos` onto
/// the path (searching a few segments starting at `start_seg`, so
/// progress along the path is monotone even where unrelated legs pass
/// nearby) and returns the point `lookahead` meters further along,
/// clamped to the final vertex, together with the segment it landed
/// on. Steering at this moving target spreads the expert's turning
/// over each corner approach instead of a one-step pivot at the
/// vertex, which keeps the demonstrated turn at time `t` aligned with
/// the direction of the position the expert occupies a
/// subgoal-horizon later.
fn pursuit_target(
    maze: &MazeSpec,
    waypoints: &[Point],
    pos: Point,
    lookahead: f64,
    start_seg: usize,
) -> (Point, usize) {
    if waypoints.len() < 2 {
        return (*waypoints.last().unwrap_or(&pos), 0);
    }
    let last_seg = waypoints.len() - 2;
    let lo = start_seg.min(last_seg);
    let hi = (lo + 3).min(last_seg);
    let mut best: Option<(f64, usize, f64)> = None;
    for require_los in [true, false] {
        for i in lo..=hi {
            let a = waypoints[i];
            let b = waypoints[i + 1];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 1e-12 {
                (((pos[0] - a[0]) * ab[0] + (pos[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let p = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d2 = (p[0] - pos[0]).powi(2) + (p[1] - pos[1]).powi(2);
            // A nearer segment across a wall is the wrong leg of the
            // path; only fall back to blocked projections when no
            // candidate is visible at all.
            if best.map_or(true, |(bd, _, _)| d2 < bd)
                && (!require_los || crate::planner::segment_clear(maze, pos, p))
            {
                best = Some((d2, i, t));
            }
        }
        if best.is_some() {
            break;
        }
    }
    let (_, seg, t) = best.unwrap();
    let mut i = seg;
    let mut cur = [
        waypoints[i][0] + t * (waypoints[i + 1][0] - waypoints[i][0]),
        waypoints[i][1] + t * (waypoints[i + 1][1] - waypoints[i][1]),
    ];
    let mut remaining = lookahead;
    loop {
        let b = waypoints[i + 1];
        let len = ((b[0] - cur[0]).powi(2) + (b[1] - cur[1]).powi(2)).sqrt();
        if len >= remaining {
            let f = remaining / len.max(1e-9);
            return ([cur[0] + f * (b[0] - cur[0]), cur[1] + f * (b[1] - cur[1])], seg);
        }
        remaining -= len;
        cur = b;
        i += 1;
        if i > last_seg {
            return (*waypoints.last().unwrap(), seg);
        }
    }
}

/// Proportional waypoint-following controller.
///
/// Turns toward the first unreached waypoint (clamped proportional
/// control on the heading error), moves forward when roughly aligned,
/// and jumps when the segment ahead crosses a Low block within 1 m.
/// With probability `noise` the boolean actions are replaced by a
/// uniform random combination.
pub fn expert_action(
    maze: &MazeSpec,
    config: &SimConfig,
    state: &AgentState,
    waypoints: &[Point],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Action {
    assert!(!waypoints.is_empty(), "expert_action requires waypoints");
    let target = *waypoints
        .iter()
        .find(|w| {
            let d = ((w[0] - state.position[0]).powi(2) + (w[1] - state.position[1]).powi(2)).sqrt();
            d > WAYPOINT_RADIUS
        })
        .unwrap_or(waypoints.last().unwrap());
    let desired = (target[1] - state.position[1]).atan2(target[0] - state.position[0]);
    let err = maze::wrap_angle(desired - state.heading);
    // Soft proportional gain: spread a correction over a few steps
    // instead of erasing the error in one. Cloning data then covers
    // the whole (heading error, turn) range with proportional labels
    // rather than collapsing onto "aligned, zero turn".
    let turn = (err / (2.5 * config.turn_rate * config.dt)).clamp(-1.0, 1.0);
    let mut act = Action {
        move_forward: err.abs() < std::f64::consts::FRAC_PI_4,
        turn,
        ..Default::default()
    };
    // Jump when a Low block lies on the next meter of the segment.
    if state.airborne_steps_left == 0 {
        let dx = target[0] - state.position[0];
        let dy = target[1] - state.position[1];
        let len = (dx * dx + dy * dy).sqrt();
        if len > 1e-9 {
            let t = (1.0 / len).min(1.0);
            let ahead = [state.position[0] + dx * t, state.position[1] + dy * t];
            let crossing = maze
                .blocks
                .iter()
                .filter(|b| b.height == HeightClass::Low)
                .any(|b| b.rect.intersects_segment(state.position, ahead));
            if crossing {
                act.jump = true;
            }
        }
    }
    if noise > 0.0 && rng.gen_bool(noise) {
        act.move_forward = rng.gen();
        act.move_backward = rng.gen();
        act.move_left = rng.gen();
        act.move_right = rng.gen();
        act.jump = rng.gen();
    }
    act
}

fn rollout_expert(maze: &MazeSpec, config: &SimConfig, noise: f64, episode_seed: u64) -> Result<Episode> {
    let (mut state, goal) = maze::reset(maze, config, episode_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut waypoints = plan_path(maze, state.position, goal.point);
    if !waypoints.is_empty() {
        // Anchor the polyline at the start so pursuit projection covers
        // the leg from the agent to the first planned vertex.
        waypoints.insert(0, state.position);
    }
    let mut wp_index = 0usize;
    let mut transitions = Vec::new();
    let mut obs = maze::observe(maze, &state);
    let mut success = false;
    let mut anchor = state.position;
    let mut anchor_step = 0u32;
    loop {
        // Drop waypoints already reached or passed. The radius alone is
        // not enough: pursuit of a lookahead point cuts corners, so the
        // agent can round a vertex without ever entering its radius; a
        // vertex also counts as passed once the agent crosses the plane
        let action = if waypoints.is_empty() {
            Action::default()
        } else {
            let full = maze.family.subgoal_horizon() as f64 * config.speed * config.dt;
            let mut lookahead = full;
            let (mut target, seg) = pursuit_target(maze, &waypoints, state.position, lookahead, wp_index);
            wp_index = seg;
            // Shrink the lookahead while the cut corner clips a wall.
            while lookahead > 0.8 && !crate::planner::segment_clear(maze, state.position, target) {
                lookahead *= 0.5;
                target = pursuit_target(maze, &waypoints, state.position, lookahead, wp_index).0;
            }
            if crate::planner::segment_clear(maze, state.position, target) {
                expert_action(maze, config, &state, &[target], noise, &mut rng)
            } else {
                // Tight spots (doorways, jamb corners): revert to plain
                // vertex pursuit, which tolerates a blocked sightline.
                let next = (seg + 1).min(waypoints.len() - 1);
                expert_action(maze, config, &state, &waypoints[next..], noise, &mut rng)
            }
        };
        let (next, next_obs, reward, done) = maze::step(maze, config, &state, &action, &goal);
        transitions.push(Transition {
            obs,
            action,
            reward,
            next_obs: next_obs.clone(),
            achieved_point: next.position,
            goal,
        });
        if reward == 1.0 {
            success = true;
        }
        state = next;
        obs = next_obs;
        if done {
            break;
        }
        // Replan when stuck.
        if state.step_index - anchor_step >= STUCK_WINDOW {
            let moved = ((state.position[0] - anchor[0]).powi(2) + (state.position[1] - anchor[1]).powi(2)).sqrt();
            if moved < STUCK_DISTANCE {
                waypoints = plan_path(maze, state.position, goal.point);
                if !waypoints.is_empty() {
                    waypoints.insert(0, state.position);
                }
                wp_index = 0;
            }
            anchor = state.position;
            anchor_step = state.step_index;
        }
    }
    Ok(Episode {
        maze_name: maze.name.clone(),
        seed: episode_seed,
        transitions,
        success,
    })
}

/// Generates `n_episodes` scripted-expert rollouts, deterministic in
/// `(maze, n_episodes, noise, seed)`.
pub fn generate_dataset(maze: &MazeSpec, n_episodes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(Error::Empty("n_episodes must be positive"));
    }
    let config = SimConfig::for_family(maze.family);
    let episodes: Vec<Result<Episode>> =
        exec::map_indexed(n_episodes, |i| rollout_expert(maze, &config, noise, seed ^ i as u64));
    let episodes = episodes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        maze_name: maze.name.clone(),
        episodes,
        generator: Generator::ScriptedExpert,
        config: DatasetConfig {
            sim: config,
            noise,
            seed,
            n_episodes,
        },
    })
}

// ---------------------------------------------------------------------------
// Hindsight sampling
// ---------------------------------------------------------------------------

/// Samples a future offset in `{1..remaining}` with weights
/// `exp(-dt / tau)`.
pub fn her_sample_offset(remaining: usize, tau: f64, rng: &mut ChaCha8Rng) -> usize {
    assert!(remaining >= 1 && tau > 0.0);
    if remaining == 1 {
        return 1;
    }
    let weights: Vec<f64> = (1..=remaining).map(|dt| (-(dt as f64) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i + 1;
        }
    }
    remaining
}

#[derive(Debug, Clone)]
pub struct LowSample {
    pub obs: Vec<f64>,
    pub subgoal: Point,
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct HighSample {
    pub obs: Vec<f64>,
    pub goal: Point,
    pub subgoal: Point,
}

#[derive(Debug, Clone)]
pub struct FlatSample {
    pub obs: Vec<f64>,
    pub goal: Point,
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct HierBatch {
    pub low: Vec<LowSample>,
    pub high: Vec<HighSample>,
    pub batch_size: usize,
}

fn pick_transition<'a>(dataset: &'a Dataset, rng: &mut ChaCha8Rng) -> (&'a Episode, usize) {
    let total = dataset.total_transitions();
    let mut idx = rng.gen_range(0..total);
    for ep in &dataset.episodes {
        if idx < ep.transitions.len() {
            return (ep, idx);
        }
        idx -= ep.transitions.len();
    }
    unreachable!()
}

/// Goal projection of state `t + k`, clamped to the episode end.
fn achieved_at(ep: &Episode, t_plus_k: usize) -> Point {
    let last = ep.transitions.len() - 1;
    ep.transitions[t_plus_k.saturating_sub(1).min(last)].achieved_point
}

/// Samples a hierarchical training batch: low-level pairs carry the
/// k-step subgoal; high-level pairs carry the episode goal, replaced
/// with probability `her_fraction` by a hindsight future goal.
pub fn sample_hier_batch(
    dataset: &Dataset,
    batch_size: usize,
    k: usize,
    tau: f64,
    her_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<HierBatch> {
    if dataset.episodes.is_empty() || dataset.total_transitions() == 0 {
        return Err(Error::Empty("dataset has no transitions"));
    }
    assert!(k >= 1);
    let mut low = Vec::with_capacity(batch_size);
    let mut high = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (ep, t) = pick_transition(dataset, rng);
        let tr = &ep.transitions[t];
        let subgoal = achieved_at(ep, t + k);
        low.push(LowSample {
            obs: tr.obs.0.clone(),
            subgoal,
            action: tr.action,
        });
        let remaining = ep.transitions.len() - t;
        let goal = if her_fraction > 0.0 && rng.gen_bool(her_fraction) {
            // Floor the hindsight offset at the subgoal horizon:
            // with dt < k the k-step subgoal would lie beyond the
            // relabeled goal, teaching the high level to propose
            // subgoals past nearby goals instead of homing onto them.
            let dt = her_sample_offset(remaining, tau, rng).max(k);
            achieved_at(ep, t + dt)
        } else {
            tr.goal.point
        };
        high.push(HighSample {
            obs: tr.obs.0.clone(),
            goal,
            subgoal,
        });
    }
    Ok(HierBatch {
        low,
        high,
        batch_size,
    })
}

/// Samples a flat cloning batch: observation and (possibly hindsight
/// relabeled) final goal paired with the demonstrated action.
pub fn sample_flat_batch(
    dataset: &Dataset,
    batch_size: usize,
    tau: f64,
    her_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlatSample>> {
    if dataset.episodes.is_empty() || dataset.total_transitions() == 0 {
        return Err(Error::Empty("dataset has no transitions"));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (ep, t) = pick_transition(dataset, rng);
        let tr = &ep.transitions[t];
        let remaining = ep.transitions.len() - t;
        let goal = if her_fraction > 0.0 && rng.gen_bool(her_fraction) {
            let dt = her_sample_offset(remaining, tau, rng);
            achieved_at(ep, t + dt)
        } else {
            tr.goal.point
        };
        out.push(FlatSample {
            obs: tr.obs.0.clone(),
            goal,
            action: tr.action,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    maze_name: String,
    generator: Generator,
    config: DatasetConfig,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    obs: Vec<f64>,
    act: [f64; 6],
    rew: f64,
    ach: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    seed: u64,
    success: bool,
    goal: [f64; 2],
    steps: Vec<StepRecord>,
    /// Observation after the final transition; needed for a lossless
    /// round trip of the chained observations.
    final_obs: Vec<f64>,
}

/// Writes the dataset: a JSON header line followed by one JSON line
/// per episode.
pub fn save_dataset(dataset: &Dataset, path: &std::path::Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = Header {
        schema_version: SCHEMA_VERSION,
        maze_name: dataset.maze_name.clone(),
        generator: dataset.generator,
        config: dataset.config,
    };
    writeln!(file, "{}", serde_json::to_string(&header).unwrap())?;
    for ep in &dataset.episodes {
        let goal = ep.transitions.first().map(|t| t.goal.point).unwrap_or([0.0, 0.0]);
        let rec = EpisodeRecord {
            seed: ep.seed,
            success: ep.success,
            goal,
            steps: ep
                .transitions
                .iter()
                .map(|t| StepRecord {
                    obs: t.obs.0.clone(),
                    act: t.action.to_vec(),
                    rew: t.reward,
                    ach: t.achieved_point,
                })
                .collect(),
            final_obs: ep.transitions.last().map(|t| t.next_obs.0.clone()).unwrap_or_default(),
        };
        writeln!(file, "{}", serde_json::to_string(&rec).unwrap())?;
    }
    Ok(())
}

/// Loads and validates a dataset file.
pub fn load_dataset(path: &std::path::Path) -> Result<Dataset> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let mut offset = 0usize;
    let header_line = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Parse {
                offset: 0,
                message: "empty dataset file".into(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        offset: offset + e.column().saturating_sub(1),
        message: format!("header: {e}"),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::validation(format!(
            "unsupported schema_version {}",
            header.schema_version
        )));
    }
    offset += header_line.len() + 1;
    let mut episodes = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        let rec: EpisodeRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            offset: offset + e.column().saturating_sub(1),
            message: format!("episode line {}: {e}", line_no + 2),
        })?;
        let goal = Goal { point: rec.goal };
        let n = rec.steps.len();
        let mut transitions = Vec::with_capacity(n);
        for (t, s) in rec.steps.iter().enumerate() {
            let next_obs = if t + 1 < n {
                rec.steps[t + 1].obs.clone()
            } else {
                rec.final_obs.clone()
            };
            transitions.push(Transition {
                obs: Observation(s.obs.clone()),
                action: Action::from_vec(s.act),
                reward: s.rew,
                next_obs: Observation(next_obs),
                achieved_point: s.ach,
                goal,
            });
        }
        episodes.push(Episode {
            maze_name: header.maze_name.clone(),
            seed: rec.seed,
            transitions,
            success: rec.success,
        });
        offset += line.len() + 1;
    }
    let dataset = Dataset {
        maze_name: header.maze_name,
        episodes,
        generator: header.generator,
        config: header.config,
    };
    dataset.validate()?;
    Ok(dataset)
}
