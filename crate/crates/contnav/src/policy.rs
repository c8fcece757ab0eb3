//! Flat and hierarchical goal-conditioned cloning policies.
//!
//! Both policies consume the 13-float observation concatenated with a
//! 2D conditioning point, encoded as the normalized displacement from
//! the agent to the point. The action head is five Bernoulli logits
//! (move x4, jump) plus a diagonal Gaussian over the turn channel;
//! the subgoal head is a diagonal 2D Gaussian over the normalized
//! displacement to the next subgoal. Losses are exact mean
//! negative log-likelihoods with analytic gradients; evaluation-time
//! decoding is deterministic (logit threshold / distribution mean).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, FlatSample, HighSample, LowSample};
use crate::error::{Error, Result};
use crate::maze::{self, Action, Goal, MazeFamily, Observation, Point, OBS_DIM};
use crate::nn::{self, AdamState, MLPSpec, Mat, ParamVector};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Network input width: observation plus a normalized 2D point.
pub const POLICY_IN_DIM: usize = OBS_DIM + 2;
/// Action head output: 5 logits, turn mean, turn log-std.
pub const ACTION_OUT_DIM: usize = 7;
/// Subgoal head output: 2D mean, 2D log-std.
pub const SUBGOAL_OUT_DIM: usize = 4;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Maps a point in meters to extent-normalized coordinates.
pub fn normalize_point(extent: [f64; 2], p: Point) -> [f64; 2] {
    [p[0] / extent[0], p[1] / extent[1]]
}

pub fn denormalize_point(extent: [f64; 2], p: [f64; 2]) -> Point {
    [p[0] * extent[0], p[1] * extent[1]]
}

/// Concatenates an observation with a conditioning point, encoded
/// relative to the agent: the appended pair is the normalized
/// displacement from the agent's position (the first two observation
/// features) to the point. Relative encoding keeps nearby subgoals
/// numerically salient instead of burying the steering direction in
/// the low digits of two absolute coordinates.
pub fn policy_input(obs: &[f64], point_norm: [f64; 2]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + 2);
    v.extend_from_slice(obs);
    v.push(point_norm[0] - obs[0]);
    v.push(point_norm[1] - obs[1]);
    v
}

/// Normalized displacement from the observation's position to a
/// point in meters; the regression target of the subgoal head.
pub fn relative_point(obs: &[f64], extent: [f64; 2], p: Point) -> [f64; 2] {
    let n = normalize_point(extent, p);
    [n[0] - obs[0], n[1] - obs[1]]
}

/// Gain applied to the subgoal displacement wherever it conditions the
/// low-level net or serves as the high-level regression target. A
/// one-horizon subgoal spans only a few percent of the extent, which
/// leaves the steering direction an order of magnitude fainter than
/// every other input feature; amplifying it restores its salience and
/// puts the regression target at unit scale.
pub const SUBGOAL_GAIN: f64 = 10.0;

/// Low-level input: observation plus the amplified displacement to an
/// extent-normalized subgoal.
pub fn subgoal_input(obs: &[f64], subgoal_norm: [f64; 2]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + 2);
    v.extend_from_slice(obs);
    v.push((subgoal_norm[0] - obs[0]) * SUBGOAL_GAIN);
    v.push((subgoal_norm[1] - obs[1]) * SUBGOAL_GAIN);
    v
}

/// High-level regression target: amplified normalized displacement to
/// a subgoal given in meters.
pub fn subgoal_target(obs: &[f64], extent: [f64; 2], p: Point) -> [f64; 2] {
    let r = relative_point(obs, extent, p);
    [r[0] * SUBGOAL_GAIN, r[1] * SUBGOAL_GAIN]
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-sample action NLL and its gradient with respect to the seven
/// head outputs. Returns `(total, bernoulli_part, gaussian_part, grad)`.
pub fn action_nll(out: &[f64], action: &Action) -> (f64, f64, f64, [f64; ACTION_OUT_DIM]) {
    let targets = action.to_vec();
    let mut grad = [0.0; ACTION_OUT_DIM];
    let mut bern = 0.0;
    for j in 0..5 {
        let l = out[j];
        let y = targets[j];
        bern += softplus(l) - y * l;
        grad[j] = sigmoid(l) - y;
    }
    let mu = out[5];
    let ls_raw = out[6];
    let ls = ls_raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let inv_var = (-2.0 * ls).exp();
    let r = action.turn - mu;
    let gauss = 0.5 * LN_2PI + ls + 0.5 * r * r * inv_var;
    grad[5] = -r * inv_var;
    if ls_raw > LOG_STD_MIN && ls_raw < LOG_STD_MAX {
        grad[6] = 1.0 - r * r * inv_var;
    }
    (bern + gauss, bern, gauss, grad)
}

/// Per-sample subgoal NLL (diagonal 2D Gaussian) and head-output
/// gradient.
pub fn subgoal_nll(out: &[f64], target: [f64; 2]) -> (f64, [f64; SUBGOAL_OUT_DIM]) {
    let mut grad = [0.0; SUBGOAL_OUT_DIM];
    let mut nll = 0.0;
    for c in 0..2 {
        let mu = out[c];
        let ls_raw = out[2 + c];
        let ls = ls_raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let inv_var = (-2.0 * ls).exp();
        let r = target[c] - mu;
        nll += 0.5 * LN_2PI + ls + 0.5 * r * r * inv_var;
        grad[c] = -r * inv_var;
        if ls_raw > LOG_STD_MIN && ls_raw < LOG_STD_MAX {
            grad[2 + c] = 1.0 - r * r * inv_var;
        }
    }
    (nll, grad)
}

/// Thresholds logits and clamps the turn mean into an executable
/// action.
pub fn decode_action(out: &[f64]) -> Action {
    Action {
        move_forward: out[0] > 0.0,
        move_backward: out[1] > 0.0,
        move_left: out[2] > 0.0,
        move_right: out[3] > 0.0,
        jump: out[4] > 0.0,
        turn: out[5].clamp(-1.0, 1.0),
    }
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct HGCBCModel {
    pub high_spec: MLPSpec,
    pub high_params: ParamVector,
    pub low_spec: MLPSpec,
    pub low_params: ParamVector,
    /// Subgoal horizon in environment steps.
    pub k: usize,
    /// Evaluation-time replanning period (defaults to `k`).
    pub replan_every: usize,
    pub extent: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GCBCModel {
    pub spec: MLPSpec,
    pub params: ParamVector,
    pub extent: [f64; 2],
}

/// Default subgoal horizon per maze family.
pub fn default_k(family: MazeFamily) -> usize {
    family.subgoal_horizon()
}

/// Default hindsight-relabeling horizon per family.
pub fn default_tau(family: MazeFamily) -> f64 {
    match family {
        MazeFamily::SimpleTown => 15.0,
        MazeFamily::AmazeVille => 100.0,
    }
}

impl HGCBCModel {
    pub fn new(family: MazeFamily, extent: [f64; 2], width: usize, seed: u64) -> HGCBCModel {
        let k = default_k(family);
        let high_spec = MLPSpec::new(POLICY_IN_DIM, SUBGOAL_OUT_DIM).with_width(width);
        let low_spec = MLPSpec::new(POLICY_IN_DIM, ACTION_OUT_DIM).with_width(width);
        HGCBCModel {
            high_spec,
            high_params: nn::init_params(&high_spec, seed),
            low_spec,
            low_params: nn::init_params(&low_spec, seed ^ 0x9e3779b97f4a7c15),
            k,
            replan_every: k,
            extent,
        }
    }

    /// Evaluation actor borrowing this model's parameters.
    pub fn actor(&self) -> HierActor<impl Fn(&[f64]) -> Vec<f64> + '_, impl Fn(&[f64]) -> Vec<f64> + '_> {
        let high = move |input: &[f64]| {
            let x = Mat { rows: 1, cols: input.len(), data: input.to_vec() };
            let (out, _) = nn::forward(&self.high_spec, &self.high_params, &x).unwrap();
            out.data
        };
        let low = move |input: &[f64]| {
            let x = Mat { rows: 1, cols: input.len(), data: input.to_vec() };
            let (out, _) = nn::forward(&self.low_spec, &self.low_params, &x).unwrap();
            out.data
        };
        HierActor::new(high, low, self.replan_every, self.extent)
    }
}

impl GCBCModel {
    pub fn new(extent: [f64; 2], width: usize, seed: u64) -> GCBCModel {
        let spec = MLPSpec::new(POLICY_IN_DIM, ACTION_OUT_DIM).with_width(width);
        GCBCModel {
            spec,
            params: nn::init_params(&spec, seed),
            extent,
        }
    }

    pub fn actor(&self) -> FlatActor<impl Fn(&[f64]) -> Vec<f64> + '_> {
        let f = move |input: &[f64]| {
            let x = Mat { rows: 1, cols: input.len(), data: input.to_vec() };
            let (out, _) = nn::forward(&self.spec, &self.params, &x).unwrap();
            out.data
        };
        FlatActor { net: f, extent: self.extent }
    }
}

// ---------------------------------------------------------------------------
// Actors
// ---------------------------------------------------------------------------

/// Anything that can drive an episode; implementations may cache
/// per-episode state (the hierarchical subgoal) but must stay
/// deterministic in `(params, obs, goal, step phase)`.
pub trait Actor {
    fn act(&mut self, obs: &Observation, goal: &Goal, step_index: usize) -> Action;
}

/// Hierarchical actor over arbitrary single-row forward functions, so
/// frozen-column composites can reuse the same decoding.
pub struct HierActor<H, L> {
    high: H,
    low: L,
    replan_every: usize,
    extent: [f64; 2],
    subgoal: Option<[f64; 2]>,
}

impl<H, L> HierActor<H, L>
where
    H: Fn(&[f64]) -> Vec<f64>,
    L: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(high: H, low: L, replan_every: usize, extent: [f64; 2]) -> HierActor<H, L> {
        assert!(replan_every >= 1);
        HierActor { high, low, replan_every, extent, subgoal: None }
    }
}

impl<H, L> Actor for HierActor<H, L>
where
    H: Fn(&[f64]) -> Vec<f64>,
    L: Fn(&[f64]) -> Vec<f64>,
{
    fn act(&mut self, obs: &Observation, goal: &Goal, step_index: usize) -> Action {
        if self.subgoal.is_none() || step_index % self.replan_every == 0 {
            let input = policy_input(&obs.0, normalize_point(self.extent, goal.point));
            let out = (self.high)(&input);
            // The head emits an amplified displacement; cache the
            // absolute normalized subgoal so later steps re-derive
            // their own relative view as the agent moves.
            self.subgoal = Some([
                out[0] / SUBGOAL_GAIN + obs.0[0],
                out[1] / SUBGOAL_GAIN + obs.0[1],
            ]);
        }
        let sg = self.subgoal.unwrap();
        let out = (self.low)(&subgoal_input(&obs.0, sg));
        decode_action(&out)
    }
}

pub struct FlatActor<F> {
    net: F,
    extent: [f64; 2],
}

impl<F: Fn(&[f64]) -> Vec<f64>> FlatActor<F> {
    pub fn new(net: F, extent: [f64; 2]) -> FlatActor<F> {
        FlatActor { net, extent }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Actor for FlatActor<F> {
    fn act(&mut self, obs: &Observation, goal: &Goal, _step_index: usize) -> Action {
        let input = policy_input(&obs.0, normalize_point(self.extent, goal.point));
        decode_action(&(self.net)(&input))
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

fn batch_mat(rows: Vec<Vec<f64>>) -> Mat {
    Mat::from_rows(rows)
}

/// Mean subgoal NLL over a high-level batch and its parameter
/// gradient.
pub fn high_loss(
    spec: &MLPSpec,
    params: &ParamVector,
    extent: [f64; 2],
    batch: &[HighSample],
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("high-level batch"));
    }
    let x = batch_mat(
        batch
            .iter()
            .map(|s| policy_input(&s.obs, normalize_point(extent, s.goal)))
            .collect(),
    );
    let (out, tape) = nn::forward(spec, params, &x)?;
    let mut og = Mat::zeros(out.rows, out.cols);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let (nll, g) = subgoal_nll(out.row(i), subgoal_target(&s.obs, extent, s.subgoal));
        if !nll.is_finite() {
            return Err(Error::NonFinite(format!("high-level NLL at batch index {i}")));
        }
        loss += nll * scale;
        for (c, gv) in g.iter().enumerate() {
            og.row_mut(i)[c] = gv * scale;
        }
    }
    let grad = nn::backward(spec, params, &tape, &og)?;
    Ok((loss, grad))
}

/// Mean action NLL over a low-level batch and its parameter gradient.
pub fn low_loss(
    spec: &MLPSpec,
    params: &ParamVector,
    extent: [f64; 2],
    batch: &[LowSample],
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("low-level batch"));
    }
    let x = batch_mat(
        batch
            .iter()
            .map(|s| subgoal_input(&s.obs, normalize_point(extent, s.subgoal)))
            .collect(),
    );
    action_batch_loss(spec, params, &x, batch.iter().map(|s| &s.action))
}

/// Mean action NLL for the flat policy (goal-conditioned).
pub fn flat_loss(
    spec: &MLPSpec,
    params: &ParamVector,
    extent: [f64; 2],
    batch: &[FlatSample],
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("flat batch"));
    }
    let x = batch_mat(
        batch
            .iter()
            .map(|s| policy_input(&s.obs, normalize_point(extent, s.goal)))
            .collect(),
    );
    action_batch_loss(spec, params, &x, batch.iter().map(|s| &s.action))
}

/// Forward-only mean subgoal NLL (no gradient); used when scanning
/// many parameter mixtures.
pub fn high_loss_value(
    spec: &MLPSpec,
    params: &ParamVector,
    extent: [f64; 2],
    batch: &[HighSample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("high-level batch"));
    }
    let x = batch_mat(
        batch
            .iter()
            .map(|s| policy_input(&s.obs, normalize_point(extent, s.goal)))
            .collect(),
    );
    let (out, _) = nn::forward(spec, params, &x)?;
    let mut loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let (nll, _) = subgoal_nll(out.row(i), subgoal_target(&s.obs, extent, s.subgoal));
        loss += nll;
    }
    Ok(loss / batch.len() as f64)
}

/// Forward-only mean action NLL for low-level batches.
pub fn low_loss_value(
    spec: &MLPSpec,
    params: &ParamVector,
    extent: [f64; 2],
    batch: &[LowSample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("low-level batch"));
    }
    let x = batch_mat(
        batch
            .iter()
            .map(|s| subgoal_input(&s.obs, normalize_point(extent, s.subgoal)))
            .collect(),
    );
    let (out, _) = nn::forward(spec, params, &x)?;
    let mut loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let (nll, _, _, _) = action_nll(out.row(i), &s.action);
        loss += nll;
    }
    Ok(loss / batch.len() as f64)
}

/// Forward-only mean action NLL for flat goal-conditioned batches.
pub fn flat_loss_value(
    spec: &MLPSpec,
    params: &ParamVector,
    extent: [f64; 2],
    batch: &[FlatSample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("flat batch"));
    }
    let x = batch_mat(
        batch
            .iter()
            .map(|s| policy_input(&s.obs, normalize_point(extent, s.goal)))
            .collect(),
    );
    let (out, _) = nn::forward(spec, params, &x)?;
    let mut loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let (nll, _, _, _) = action_nll(out.row(i), &s.action);
        loss += nll;
    }
    Ok(loss / batch.len() as f64)
}

fn action_batch_loss<'a>(
    spec: &MLPSpec,
    params: &ParamVector,
    x: &Mat,
    actions: impl Iterator<Item = &'a Action>,
) -> Result<(f64, ParamVector)> {
    let (out, tape) = nn::forward(spec, params, x)?;
    let mut og = Mat::zeros(out.rows, out.cols);
    let scale = 1.0 / out.rows as f64;
    let mut loss = 0.0;
    for (i, a) in actions.enumerate() {
        let (nll, _, _, g) = action_nll(out.row(i), a);
        if !nll.is_finite() {
            return Err(Error::NonFinite(format!("action NLL at batch index {i}")));
        }
        loss += nll * scale;
        for (c, gv) in g.iter().enumerate() {
            og.row_mut(i)[c] = gv * scale;
        }
    }
    let grad = nn::backward(spec, params, &tape, &og)?;
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Hindsight-relabeling horizon (geometric-like decay scale).
    pub tau: f64,
    pub her_fraction: f64,
    pub lr: f64,
}

impl TrainConfig {
    pub fn for_family(family: MazeFamily) -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            tau: default_tau(family),
            her_fraction: 0.5,
            lr: 3e-4,
        }
    }
}

/// Which network a gradient penalty applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    High,
    Low,
    Flat,
}

/// Extra loss term added by the caller (regularization strategies):
/// given the net and its current parameters, returns an additional
/// loss value and gradient.
pub type Penalty<'a> = &'a dyn Fn(Net, &ParamVector) -> (f64, ParamVector);

/// Joint Adam training of both levels on hierarchical batches.
/// Returns the per-step total loss trace (high + low, plus any
/// penalty terms).
pub fn train_hier(
    model: &mut HGCBCModel,
    data: &Dataset,
    steps: usize,
    seed: u64,
    cfg: &TrainConfig,
    penalty: Option<Penalty>,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam_h = AdamState::new(model.high_params.len()).with_lr(cfg.lr);
    let mut adam_l = AdamState::new(model.low_params.len()).with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = dataset::sample_hier_batch(
            data,
            cfg.batch_size,
            model.k,
            cfg.tau,
            cfg.her_fraction,
            &mut rng,
        )?;
        let (mut lh, mut gh) = high_loss(&model.high_spec, &model.high_params, model.extent, &batch.high)?;
        let (mut ll, mut gl) = low_loss(&model.low_spec, &model.low_params, model.extent, &batch.low)?;
        if let Some(p) = penalty {
            let (ph, pgh) = p(Net::High, &model.high_params);
            let (pl, pgl) = p(Net::Low, &model.low_params);
            lh += ph;
            ll += pl;
            for (g, e) in gh.data.iter_mut().zip(&pgh.data) {
                *g += e;
            }
            for (g, e) in gl.data.iter_mut().zip(&pgl.data) {
                *g += e;
            }
        }
        let total = lh + ll;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        nn::adam_step(&mut model.high_params, &gh, &mut adam_h)?;
        nn::adam_step(&mut model.low_params, &gl, &mut adam_l)?;
        trace.push(total);
    }
    Ok(trace)
}

/// Adam training of the flat policy on goal-conditioned batches.
pub fn train_flat(
    model: &mut GCBCModel,
    data: &Dataset,
    steps: usize,
    seed: u64,
    cfg: &TrainConfig,
    penalty: Option<Penalty>,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(model.params.len()).with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = dataset::sample_flat_batch(data, cfg.batch_size, cfg.tau, cfg.her_fraction, &mut rng)?;
        let (mut loss, mut grad) = flat_loss(&model.spec, &model.params, model.extent, &batch)?;
        if let Some(p) = penalty {
            let (pl, pg) = p(Net::Flat, &model.params);
            loss += pl;
            for (g, e) in grad.data.iter_mut().zip(&pg.data) {
                *g += e;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        nn::adam_step(&mut model.params, &grad, &mut adam)?;
        trace.push(loss);
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HierSidecar {
    kind: String,
    k: usize,
    replan_every: usize,
    extent: [f64; 2],
    log_std_clamp: [f64; 2],
}

/// Writes `high.ckpt`, `low.ckpt`, and `model.json` into `dir`.
pub fn save_hier(dir: &std::path::Path, model: &HGCBCModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    nn::save_params(&dir.join("high.ckpt"), &model.high_spec, &model.high_params)?;
    nn::save_params(&dir.join("low.ckpt"), &model.low_spec, &model.low_params)?;
    let sc = HierSidecar {
        kind: "hgcbc".into(),
        k: model.k,
        replan_every: model.replan_every,
        extent: model.extent,
        log_std_clamp: [LOG_STD_MIN, LOG_STD_MAX],
    };
    std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&sc).unwrap())?;
    Ok(())
}

pub fn load_hier(dir: &std::path::Path) -> Result<HGCBCModel> {
    let sc: HierSidecar = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)
        .map_err(|e| Error::validation(format!("model sidecar: {e}")))?;
    if sc.kind != "hgcbc" {
        return Err(Error::validation(format!("expected hgcbc checkpoint, got '{}'", sc.kind)));
    }
    let (high_spec, high_params) = nn::load_params(&dir.join("high.ckpt"))?;
    let (low_spec, low_params) = nn::load_params(&dir.join("low.ckpt"))?;
    Ok(HGCBCModel {
        high_spec,
        high_params,
        low_spec,
        low_params,
        k: sc.k,
        replan_every: sc.replan_every,
        extent: sc.extent,
    })
}

pub fn save_flat(dir: &std::path::Path, model: &GCBCModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    nn::save_params(&dir.join("net.ckpt"), &model.spec, &model.params)?;
    let sc = HierSidecar {
        kind: "gcbc".into(),
        k: 0,
        replan_every: 0,
        extent: model.extent,
        log_std_clamp: [LOG_STD_MIN, LOG_STD_MAX],
    };
    std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&sc).unwrap())?;
    Ok(())
}

pub fn load_flat(dir: &std::path::Path) -> Result<GCBCModel> {
    let sc: HierSidecar = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)
        .map_err(|e| Error::validation(format!("model sidecar: {e}")))?;
    if sc.kind != "gcbc" {
        return Err(Error::validation(format!("expected gcbc checkpoint, got '{}'", sc.kind)));
    }
    let (spec, params) = nn::load_params(&dir.join("net.ckpt"))?;
    Ok(GCBCModel { spec, params, extent: sc.extent })
}

/// Rolls out an actor on a maze episode; success as defined by the
/// simulator's goal radius.
pub fn rollout<A: Actor>(
    maze_spec: &maze::MazeSpec,
    config: &maze::SimConfig,
    actor: &mut A,
    seed: u64,
) -> Result<bool> {
    let (mut state, goal) = maze::reset(maze_spec, config, seed)?;
    let mut obs = maze::observe(maze_spec, &state);
    loop {
        let action = actor.act(&obs, &goal, state.step_index as usize);
        let (next, next_obs, reward, done) = maze::step(maze_spec, config, &state, &action, &goal);
        state = next;
        obs = next_obs;
        if done {
            return Ok(reward == 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::builtin_maze;
    use rand::Rng;

    fn tiny_hier() -> HGCBCModel {
        let mut m = HGCBCModel::new(MazeFamily::SimpleTown, [20.0, 20.0], 8, 7);
        m.high_spec.n_hidden_blocks = 1;
        m.low_spec.n_hidden_blocks = 1;
        m.high_params = nn::init_params(&m.high_spec, 7);
        m.low_params = nn::init_params(&m.low_spec, 8);
        m
    }

    fn random_obs(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..OBS_DIM).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn gaussian_nll_at_mean_is_log_2pi() {
        let out = [0.3, -0.4, 0.0, 0.0];
        let (nll, _) = subgoal_nll(&out, [0.3, -0.4]);
        assert!((nll - LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn log_std_shift_changes_nll_linearly_at_mean() {
        let base = [0.1, 0.2, 0.3, 0.3];
        let shifted = [0.1, 0.2, 0.6, 0.6];
        let (a, _) = subgoal_nll(&base, [0.1, 0.2]);
        let (b, _) = subgoal_nll(&shifted, [0.1, 0.2]);
        assert!((b - a - 2.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_give_max_entropy_bernoulli() {
        let out = [0.0; 7];
        let a = Action::default();
        let (_, bern, _, _) = action_nll(&out, &a);
        assert!((bern - 5.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_contributes_nothing() {
        let mut out = [0.0; 7];
        out[0] = 20.0;
        let a = Action { move_forward: true, ..Action::default() };
        let (_, bern, _, _) = action_nll(&out, &a);
        let rest = 4.0 * std::f64::consts::LN_2;
        assert!((bern - rest).abs() < 1e-8);
    }

    #[test]
    fn gaussian_part_respects_clamp_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bound = 0.5 * LN_2PI + LOG_STD_MIN;
        for _ in 0..500 {
            let out: Vec<f64> = (0..7).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let a = Action {
                move_forward: rng.gen(),
                move_backward: rng.gen(),
                move_left: rng.gen(),
                move_right: rng.gen(),
                jump: rng.gen(),
                turn: rng.gen_range(-1.0..1.0),
            };
            let (total, bern, gauss, _) = action_nll(&out, &a);
            assert!(bern >= 0.0);
            assert!(gauss >= bound - 1e-12, "gauss {gauss} < bound {bound}");
            assert!((total - bern - gauss).abs() < 1e-12);
        }
    }

    fn random_high_batch(n: usize, seed: u64) -> Vec<HighSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| HighSample {
                obs: random_obs(&mut rng),
                goal: [rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)],
                subgoal: [rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)],
            })
            .collect()
    }

    fn random_low_batch(n: usize, seed: u64) -> Vec<LowSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| LowSample {
                obs: random_obs(&mut rng),
                subgoal: [rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)],
                action: Action {
                    move_forward: rng.gen(),
                    move_backward: rng.gen(),
                    move_left: rng.gen(),
                    move_right: rng.gen(),
                    jump: rng.gen(),
                    turn: rng.gen_range(-1.0..1.0),
                },
            })
            .collect()
    }

    #[test]
    fn high_loss_gradient_matches_finite_differences() {
        let m = tiny_hier();
        let batch = random_high_batch(4, 11);
        let (_, grad) = high_loss(&m.high_spec, &m.high_params, m.extent, &batch).unwrap();
        let fd = nn::finite_difference_grad(&m.high_params, 1e-5, |p| {
            high_loss(&m.high_spec, p, m.extent, &batch).unwrap().0
        });
        let err = nn::max_rel_error(&grad.data, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn low_loss_gradient_matches_finite_differences() {
        let m = tiny_hier();
        let batch = random_low_batch(4, 12);
        let (_, grad) = low_loss(&m.low_spec, &m.low_params, m.extent, &batch).unwrap();
        let fd = nn::finite_difference_grad(&m.low_params, 1e-5, |p| {
            low_loss(&m.low_spec, p, m.extent, &batch).unwrap().0
        });
        let err = nn::max_rel_error(&grad.data, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn flat_loss_gradient_matches_finite_differences() {
        let g = GCBCModel::new([20.0, 20.0], 8, 3);
        let batch: Vec<FlatSample> = random_low_batch(4, 13)
            .into_iter()
            .map(|s| FlatSample { obs: s.obs, goal: s.subgoal, action: s.action })
            .collect();
        let (_, grad) = flat_loss(&g.spec, &g.params, g.extent, &batch).unwrap();
        let fd = nn::finite_difference_grad(&g.params, 1e-5, |p| {
            flat_loss(&g.spec, p, g.extent, &batch).unwrap().0
        });
        let err = nn::max_rel_error(&grad.data, &fd);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn empty_batches_are_rejected() {
        let m = tiny_hier();
        assert!(high_loss(&m.high_spec, &m.high_params, m.extent, &[]).is_err());
        assert!(low_loss(&m.low_spec, &m.low_params, m.extent, &[]).is_err());
    }

    #[test]
    fn decode_thresholds_logits() {
        let out = [3.0, -3.0, -3.0, -3.0, -3.0, 0.2, 0.0];
        let a = decode_action(&out);
        assert!(a.move_forward && !a.move_backward && !a.move_left && !a.move_right && !a.jump);
        assert_eq!(a.turn, 0.2);
        let wide = [0.0, 0.0, 0.0, 0.0, 0.0, 7.5, 0.0];
        assert_eq!(decode_action(&wide).turn, 1.0);
    }

    #[test]
    fn act_is_deterministic_and_respects_replan_schedule() {
        let m = tiny_hier();
        let maze_spec = builtin_maze("S-BASE").unwrap();
        let config = maze::SimConfig::for_family(MazeFamily::SimpleTown);
        let (state, goal) = maze::reset(&maze_spec, &config, 4).unwrap();
        let obs = maze::observe(&maze_spec, &state);
        let mut a1 = m.actor();
        let mut a2 = m.actor();
        assert_eq!(a1.act(&obs, &goal, 0), a2.act(&obs, &goal, 0));
        assert_eq!(a1.act(&obs, &goal, 0), a1.act(&obs, &goal, 0));

        // With replan_every = 1 the cached subgoal must be refreshed
        // every step: a changed goal shows through immediately.
        let mut m1 = m.clone();
        m1.replan_every = 1;
        let mut actor = m1.actor();
        let first = actor.act(&obs, &goal, 0);
        let other_goal = Goal { point: [goal.point[0], goal.point[1] - 8.0] };
        let moved = actor.act(&obs, &other_goal, 1);
        // Same phase with replan_every=k>1 would ignore the new goal.
        let mut cached = m.actor();
        let _ = cached.act(&obs, &goal, 0);
        let stale = cached.act(&obs, &other_goal, 1);
        let base = cached_base(&m, &obs, &goal);
        assert_eq!(stale, base, "cached subgoal must persist off-phase");
        let _ = (first, moved);
    }

    fn cached_base(m: &HGCBCModel, obs: &Observation, goal: &Goal) -> Action {
        let mut a = m.actor();
        let _ = a.act(obs, goal, 0);
        a.act(obs, goal, 1)
    }

    #[test]
    fn train_zero_steps_is_identity_and_seeds_reproduce() {
        let maze_spec = builtin_maze("S-BASE").unwrap();
        let data = dataset::generate_dataset(&maze_spec, 5, 0.1, 21).unwrap();
        let cfg = TrainConfig::for_family(MazeFamily::SimpleTown);

        let mut m0 = tiny_hier();
        let before = m0.clone();
        let trace = train_hier(&mut m0, &data, 0, 1, &cfg, None).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m0, before);

        let mut ma = tiny_hier();
        let mut mb = tiny_hier();
        let ta = train_hier(&mut ma, &data, 25, 5, &cfg, None).unwrap();
        let tb = train_hier(&mut mb, &data, 25, 5, &cfg, None).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ma.high_params.data, mb.high_params.data);
        assert_eq!(ma.low_params.data, mb.low_params.data);

        let mut mf = GCBCModel::new([20.0, 20.0], 8, 2);
        let mut mf2 = mf.clone();
        let fa = train_flat(&mut mf, &data, 25, 5, &cfg, None).unwrap();
        let fb = train_flat(&mut mf2, &data, 25, 5, &cfg, None).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(mf.params.data, mf2.params.data);
    }

    #[test]
    fn training_reduces_loss_in_moving_average() {
        let maze_spec = builtin_maze("S-BASE").unwrap();
        let data = dataset::generate_dataset(&maze_spec, 20, 0.1, 22).unwrap();
        let cfg = TrainConfig::for_family(MazeFamily::SimpleTown);
        let mut m = HGCBCModel::new(MazeFamily::SimpleTown, [20.0, 20.0], 32, 3);
        let trace = train_hier(&mut m, &data, 400, 9, &cfg, None).unwrap();
        let head: f64 = trace[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = trace[trace.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn penalty_term_shifts_training() {
        let maze_spec = builtin_maze("S-BASE").unwrap();
        let data = dataset::generate_dataset(&maze_spec, 5, 0.1, 23).unwrap();
        let cfg = TrainConfig::for_family(MazeFamily::SimpleTown);
        let mut plain = tiny_hier();
        let mut reg = tiny_hier();
        train_hier(&mut plain, &data, 10, 3, &cfg, None).unwrap();
        let penalty = |_net: Net, p: &ParamVector| {
            let loss: f64 = p.data.iter().map(|v| v * v).sum::<f64>();
            let mut g = ParamVector::zeros_like(p);
            for (gv, pv) in g.data.iter_mut().zip(&p.data) {
                *gv = 2.0 * pv;
            }
            (loss, g)
        };
        train_hier(&mut reg, &data, 10, 3, &cfg, Some(&penalty)).unwrap();
        assert_ne!(plain.high_params.data, reg.high_params.data);
        // Zero penalty must be a bitwise no-op relative to no penalty.
        let zero = |_net: Net, p: &ParamVector| (0.0, ParamVector::zeros_like(p));
        let mut zeroed = tiny_hier();
        train_hier(&mut zeroed, &data, 10, 3, &cfg, Some(&zero)).unwrap();
        assert_eq!(plain.high_params.data, zeroed.high_params.data);
        assert_eq!(plain.low_params.data, zeroed.low_params.data);
    }

    #[test]
    fn checkpoint_round_trips_both_model_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_hier();
        save_hier(&dir.path().join("h"), &m).unwrap();
        let m2 = load_hier(&dir.path().join("h")).unwrap();
        assert_eq!(m, m2);
        let g = GCBCModel::new([60.0, 60.0], 8, 5);
        save_flat(&dir.path().join("g"), &g).unwrap();
        let g2 = load_flat(&dir.path().join("g")).unwrap();
        assert_eq!(g, g2);
        assert!(load_hier(&dir.path().join("g")).is_err());
    }
}
