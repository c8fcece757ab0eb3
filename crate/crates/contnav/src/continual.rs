//! Continual-learning strategies over a stream of navigation tasks.
//!
//! Every strategy wraps both levels of the hierarchical policy and
//! exposes two operations: `train_next` consumes the next task's
//! dataset, and `policy_for_task` yields an evaluable policy for any
//! task index. Bookkeeping (wall-clock training cost, inference and
//! training parameter counts) feeds the metrics module.
//!
//! The ten kinds:
//! - `SC1`  retrain from scratch on the latest task only
//! - `SCN`  retrain from scratch per task, keep every model
//! - `FT1`  finetune one running model
//! - `FTN`  finetune a copy per task, keep every copy
//! - `FRZ`  train once, then freeze
//! - `RPL`  finetune one model on the union replay buffer
//! - `EWC`  finetune with a Fisher-weighted quadratic anchor penalty
//! - `L2`   the same penalty with unit Fisher
//! - `PNN`  frozen columns with trained lateral adapters
//! - `HiSPO` per-level anchor subspaces with simplex search and
//!   diversity-regularized candidate anchors

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::dataset::{self, Dataset, HighSample, LowSample};
use crate::error::{Error, Result};
use crate::maze::MazeFamily;
use crate::nn::{self, AdamState, MLPSpec, Mat, ParamVector};
use crate::policy::{
    self, Actor, HGCBCModel, Net, TrainConfig, ACTION_OUT_DIM, POLICY_IN_DIM, SUBGOAL_OUT_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    SC1,
    SCN,
    FT1,
    FTN,
    FRZ,
    RPL,
    EWC,
    L2,
    PNN,
    HiSPO,
}

impl StrategyKind {
    pub fn all() -> [StrategyKind; 10] {
        use StrategyKind::*;
        [SC1, SCN, FT1, FTN, FRZ, RPL, EWC, L2, PNN, HiSPO]
    }

    pub fn name(&self) -> &'static str {
        use StrategyKind::*;
        match self {
            SC1 => "SC1",
            SCN => "SCN",
            FT1 => "FT1",
            FTN => "FTN",
            FRZ => "FRZ",
            RPL => "RPL",
            EWC => "EWC",
            L2 => "L2",
            PNN => "PNN",
            HiSPO => "HiSPO",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<StrategyKind> {
        StrategyKind::all()
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unknown {
                kind: "strategy",
                name: s.to_string(),
                options: StrategyKind::all().iter().map(|k| k.name().to_string()).collect(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Regularization strength for EWC/L2.
    pub lambda: f64,
    /// HiSPO acceptance thresholds per level.
    pub eps_h: f64,
    pub eps_l: f64,
    /// HiSPO diversity-penalty weights per level.
    pub lambda_h: f64,
    pub lambda_l: f64,
    /// HiSPO simplex samples per search.
    pub m_alphas: usize,
    /// Single-sample gradients used for the Fisher diagonal.
    pub fisher_samples: usize,
}

impl Default for Hyperparams {
    fn default() -> Hyperparams {
        Hyperparams {
            lambda: 1.0,
            eps_h: 5e-2,
            eps_l: 5e-2,
            lambda_h: 1e-1,
            lambda_l: 1e-1,
            m_alphas: 64,
            fisher_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLedgerEntry {
    /// Parameters needed to act after this task.
    pub inference: usize,
    /// Parameters held during training (anchors, Fisher, snapshots).
    pub training: usize,
}

pub fn extent_for(family: MazeFamily) -> [f64; 2] {
    match family {
        MazeFamily::SimpleTown => [20.0, 20.0],
        MazeFamily::AmazeVille => [60.0, 60.0],
    }
}

/// One frozen-column unit of the progressive strategy. Laterals are
/// flat per level: slice `(p * n_blocks + b) * w * w ..` maps column
/// `p`'s block-`b` post-layer-norm activations into this column's
/// block-`b` output.
#[derive(Debug, Clone, PartialEq)]
pub struct PNNColumn {
    pub high: ParamVector,
    pub low: ParamVector,
    pub lat_high: Vec<f64>,
    pub lat_low: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    High,
    Low,
}

#[derive(Debug, Clone)]
pub struct StrategyState {
    pub kind: StrategyKind,
    pub hp: Hyperparams,
    pub family: MazeFamily,
    pub extent: [f64; 2],
    pub high_spec: MLPSpec,
    pub low_spec: MLPSpec,
    pub k: usize,
    /// Single running model (all kinds except PNN keep one).
    pub current: Option<HGCBCModel>,
    /// Per-task snapshots (SCN/FTN).
    pub snapshots: Vec<HGCBCModel>,
    /// Anchor parameters θ* for EWC/L2, per level.
    pub anchor: Option<[ParamVector; 2]>,
    /// Accumulated Fisher diagonals (EWC), per level.
    pub fisher: Option<[Vec<f64>; 2]>,
    fisher_tasks: usize,
    pub columns: Vec<PNNColumn>,
    pub anchors_high: Vec<ParamVector>,
    pub anchors_low: Vec<ParamVector>,
    /// Winning mixture weights per task, per level.
    pub alphas: Vec<[Vec<f64>; 2]>,
    /// Replay buffer (RPL): accumulated episodes.
    pub replay: Vec<dataset::Episode>,
    /// Wall-clock training minutes per task.
    pub trn_minutes: Vec<f64>,
    pub param_ledger: Vec<ParamLedgerEntry>,
    pub tasks_seen: usize,
}

impl StrategyState {
    pub fn new(kind: StrategyKind, family: MazeFamily, width: usize, hp: Hyperparams) -> StrategyState {
        let high_spec = MLPSpec::new(POLICY_IN_DIM, SUBGOAL_OUT_DIM).with_width(width);
        let low_spec = MLPSpec::new(POLICY_IN_DIM, ACTION_OUT_DIM).with_width(width);
        StrategyState {
            kind,
            hp,
            family,
            extent: extent_for(family),
            high_spec,
            low_spec,
            k: policy::default_k(family),
            current: None,
            snapshots: Vec::new(),
            anchor: None,
            fisher: None,
            fisher_tasks: 0,
            columns: Vec::new(),
            anchors_high: Vec::new(),
            anchors_low: Vec::new(),
            alphas: Vec::new(),
            replay: Vec::new(),
            trn_minutes: Vec::new(),
            param_ledger: Vec::new(),
            tasks_seen: 0,
        }
    }

    fn fresh_model(&self, seed: u64) -> HGCBCModel {
        HGCBCModel::new(self.family, self.extent, self.high_spec.hidden_width, seed)
    }

    /// Parameters of the single-model backbone (the MEM reference).
    pub fn base_param_count(&self) -> usize {
        nn::param_count(&self.high_spec) + nn::param_count(&self.low_spec)
    }

    pub fn inference_param_count(&self) -> usize {
        let base = self.base_param_count();
        match self.kind {
            StrategyKind::SC1
            | StrategyKind::FT1
            | StrategyKind::FRZ
            | StrategyKind::RPL
            | StrategyKind::EWC
            | StrategyKind::L2 => base,
            StrategyKind::SCN | StrategyKind::FTN => self.snapshots.len() * base,
            StrategyKind::PNN => self
                .columns
                .iter()
                .map(|c| c.high.len() + c.low.len() + c.lat_high.len() + c.lat_low.len())
                .sum(),
            StrategyKind::HiSPO => {
                self.anchors_high.iter().map(|a| a.len()).sum::<usize>()
                    + self.anchors_low.iter().map(|a| a.len()).sum::<usize>()
            }
        }
    }

    pub fn training_param_count(&self) -> usize {
        let base = self.base_param_count();
        match self.kind {
            StrategyKind::EWC => 3 * base,
            StrategyKind::L2 => 2 * base,
            _ => self.inference_param_count(),
        }
    }

    /// Transitions held in the replay buffer (reported separately
    /// from the parameter-based memory ratio).
    pub fn replay_transitions(&self) -> usize {
        self.replay.iter().map(|e| e.transitions.len()).sum()
    }

    /// Trains on the next task of the stream. `task_index` must equal
    /// the number of tasks already consumed.
    pub fn train_next(
        &mut self,
        task_index: usize,
        data: &Dataset,
        steps: usize,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<()> {
        if task_index != self.tasks_seen {
            return Err(Error::validation(format!(
                "task_index {task_index} does not match {} tasks consumed",
                self.tasks_seen
            )));
        }
        if data.total_transitions() == 0 {
            return Err(Error::Empty("task dataset"));
        }
        let t0 = Instant::now();
        match self.kind {
            StrategyKind::SC1 => {
                self.current = Some(train_standalone(self, data, steps, cfg, seed)?);
            }
            StrategyKind::SCN => {
                let model = train_standalone(self, data, steps, cfg, seed)?;
                self.snapshots.push(model.clone());
                self.current = Some(model);
            }
            StrategyKind::FRZ => {
                if task_index == 0 {
                    self.current = Some(train_standalone(self, data, steps, cfg, seed)?);
                }
            }
            StrategyKind::FT1 => {
                if task_index == 0 {
                    self.current = Some(train_standalone(self, data, steps, cfg, seed)?);
                } else {
                    let model = self.current.as_mut().unwrap();
                    policy::train_hier(model, data, steps, train_seed(seed), cfg, None)?;
                }
            }
            StrategyKind::FTN => {
                let model = if task_index == 0 {
                    train_standalone(self, data, steps, cfg, seed)?
                } else {
                    let mut copy = self.current.clone().unwrap();
                    policy::train_hier(&mut copy, data, steps, train_seed(seed), cfg, None)?;
                    copy
                };
                self.snapshots.push(model.clone());
                self.current = Some(model);
            }
            StrategyKind::RPL => {
                self.replay.extend(data.episodes.iter().cloned());
                let merged = Dataset {
                    maze_name: "replay".into(),
                    episodes: self.replay.clone(),
                    generator: data.generator.clone(),
                    config: data.config,
                };
                if task_index == 0 {
                    let mut model = self.fresh_model(seed);
                    policy::train_hier(&mut model, &merged, steps, train_seed(seed), cfg, None)?;
                    self.current = Some(model);
                } else {
                    let model = self.current.as_mut().unwrap();
                    policy::train_hier(model, &merged, steps, train_seed(seed), cfg, None)?;
                }
            }
            StrategyKind::EWC | StrategyKind::L2 => {
                self.train_regularized(task_index, data, steps, cfg, seed)?;
            }
            StrategyKind::PNN => {
                self.train_new_column(data, steps, cfg, seed)?;
            }
            StrategyKind::HiSPO => {
                self.train_subspace(task_index, data, steps, cfg, seed)?;
            }
        }
        self.trn_minutes.push(t0.elapsed().as_secs_f64() / 60.0);
        self.param_ledger.push(ParamLedgerEntry {
            inference: self.inference_param_count(),
            training: self.training_param_count(),
        });
        self.tasks_seen += 1;
        Ok(())
    }

    fn train_regularized(
        &mut self,
        task_index: usize,
        data: &Dataset,
        steps: usize,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<()> {
        if task_index == 0 {
            self.current = Some(train_standalone(self, data, steps, cfg, seed)?);
        } else {
            let anchor = self.anchor.clone().unwrap();
            let fisher = match (&self.fisher, self.kind) {
                (Some(f), StrategyKind::EWC) => f.clone(),
                _ => [vec![1.0; anchor[0].len()], vec![1.0; anchor[1].len()]],
            };
            let lambda = self.hp.lambda;
            let penalty = move |net: Net, p: &ParamVector| {
                let (a, f) = match net {
                    Net::High => (&anchor[0], &fisher[0]),
                    Net::Low | Net::Flat => (&anchor[1], &fisher[1]),
                };
                quadratic_penalty(p, a, f, lambda)
            };
            let model = self.current.as_mut().unwrap();
            policy::train_hier(model, data, steps, train_seed(seed), cfg, Some(&penalty))?;
        }
        let model = self.current.as_ref().unwrap();
        self.anchor = Some([model.high_params.clone(), model.low_params.clone()]);
        if self.kind == StrategyKind::EWC {
            let (fh, fl) = estimate_fisher_diag(model, data, self.hp.fisher_samples, fisher_seed(seed))?;
            self.fisher = Some(match self.fisher.take() {
                None => [fh, fl],
                Some([oh, ol]) => {
                    let t = self.fisher_tasks as f64;
                    let avg = |old: Vec<f64>, new: Vec<f64>| {
                        old.into_iter()
                            .zip(new)
                            .map(|(o, n)| (o * t + n) / (t + 1.0))
                            .collect()
                    };
                    [avg(oh, fh), avg(ol, fl)]
                }
            });
            self.fisher_tasks += 1;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // PNN
    // ------------------------------------------------------------------

    fn lat_len(&self, prev_cols: usize, spec: &MLPSpec) -> usize {
        prev_cols * spec.n_hidden_blocks * spec.hidden_width * spec.hidden_width
    }

    fn train_new_column(&mut self, data: &Dataset, steps: usize, cfg: &TrainConfig, seed: u64) -> Result<()> {
        let prev = self.columns.len();
        // Zero-initialized laterals: a new column starts exactly like
        // a standalone network.
        let mut col = PNNColumn {
            high: nn::init_params(&self.high_spec, seed),
            low: nn::init_params(&self.low_spec, seed ^ 0x9e3779b97f4a7c15),
            lat_high: vec![0.0; self.lat_len(prev, &self.high_spec)],
            lat_low: vec![0.0; self.lat_len(prev, &self.low_spec)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(train_seed(seed));
        let mut adam_h = AdamState::new(col.high.len()).with_lr(cfg.lr);
        let mut adam_l = AdamState::new(col.low.len()).with_lr(cfg.lr);
        let mut adam_lat_h = AdamState::new(col.lat_high.len()).with_lr(cfg.lr);
        let mut adam_lat_l = AdamState::new(col.lat_low.len()).with_lr(cfg.lr);
        for step in 0..steps {
            let batch =
                dataset::sample_hier_batch(data, cfg.batch_size, self.k, cfg.tau, cfg.her_fraction, &mut rng)?;
            let (lh, gh, glat_h) = self.column_level_grads(&col, Level::High, &batch.high, &batch.low)?;
            let (ll, gl, glat_l) = self.column_level_grads(&col, Level::Low, &batch.high, &batch.low)?;
            if !(lh + ll).is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            nn::adam_step(&mut col.high, &gh, &mut adam_h)?;
            nn::adam_step(&mut col.low, &gl, &mut adam_l)?;
            if prev > 0 {
                nn::adam_step_raw(&mut col.lat_high, &glat_h, &mut adam_lat_h)?;
                nn::adam_step_raw(&mut col.lat_low, &glat_l, &mut adam_lat_l)?;
            }
        }
        self.columns.push(col);
        Ok(())
    }

    /// Loss and gradients (column params + laterals) for one level of
    /// a trainee column stacked on the frozen columns.
    fn column_level_grads(
        &self,
        col: &PNNColumn,
        level: Level,
        high_batch: &[HighSample],
        low_batch: &[LowSample],
    ) -> Result<(f64, ParamVector, Vec<f64>)> {
        let (spec, params, lat) = match level {
            Level::High => (&self.high_spec, &col.high, &col.lat_high),
            Level::Low => (&self.low_spec, &col.low, &col.lat_low),
        };
        let x = match level {
            Level::High => Mat::from_rows(
                high_batch
                    .iter()
                    .map(|s| policy::policy_input(&s.obs, policy::normalize_point(self.extent, s.goal)))
                    .collect(),
            ),
            Level::Low => Mat::from_rows(
                low_batch
                    .iter()
                    .map(|s| policy::subgoal_input(&s.obs, policy::normalize_point(self.extent, s.subgoal)))
                    .collect(),
            ),
        };
        let prev_acts = self.frozen_activations(level, &x)?;
        let inj = build_injections(spec, lat, &prev_acts, x.rows);
        let (out, tape) = nn::forward_with_injections(spec, params, &x, inj.as_deref())?;
        let scale = 1.0 / x.rows as f64;
        let mut og = Mat::zeros(out.rows, out.cols);
        let mut loss = 0.0;
        match level {
            Level::High => {
                for (i, s) in high_batch.iter().enumerate() {
                    let (nll, g) =
                        policy::subgoal_nll(out.row(i), policy::subgoal_target(&s.obs, self.extent, s.subgoal));
                    loss += nll * scale;
                    for (c, gv) in g.iter().enumerate() {
                        og.row_mut(i)[c] = gv * scale;
                    }
                }
            }
            Level::Low => {
                for (i, s) in low_batch.iter().enumerate() {
                    let (nll, _, _, g) = policy::action_nll(out.row(i), &s.action);
                    loss += nll * scale;
                    for (c, gv) in g.iter().enumerate() {
                        og.row_mut(i)[c] = gv * scale;
                    }
                }
            }
        }
        let (grad, inj_grads) = nn::backward_with_injections(spec, params, &tape, &og)?;
        let mut lat_grad = vec![0.0; lat.len()];
        let w = spec.hidden_width;
        let nb = spec.n_hidden_blocks;
        for (p, acts) in prev_acts.iter().enumerate() {
            for b in 0..nb {
                let off = (p * nb + b) * w * w;
                let mut dummy_db = vec![0.0; w];
                let _ = nn::linear_backward(
                    &lat[off..off + w * w],
                    &acts[b],
                    &inj_grads[b],
                    &mut lat_grad[off..off + w * w],
                    &mut dummy_db,
                );
            }
        }
        Ok((loss, grad, lat_grad))
    }

    /// Per-block activations of every existing (frozen) column on a
    /// batch, each column evaluated with its own laterals.
    fn frozen_activations(&self, level: Level, x: &Mat) -> Result<Vec<Vec<Mat>>> {
        let spec = match level {
            Level::High => &self.high_spec,
            Level::Low => &self.low_spec,
        };
        let mut acts: Vec<Vec<Mat>> = Vec::with_capacity(self.columns.len());
        for col in &self.columns {
            let (params, lat) = match level {
                Level::High => (&col.high, &col.lat_high),
                Level::Low => (&col.low, &col.lat_low),
            };
            let inj = build_injections(spec, lat, &acts, x.rows);
            let (_, tape) = nn::forward_with_injections(spec, params, x, inj.as_deref())?;
            acts.push(tape.block_activations().into_iter().cloned().collect());
        }
        Ok(acts)
    }

    /// Forward pass of column `upto` (with its lateral stack) on a
    /// single input row.
    pub fn column_forward(&self, level_high: bool, upto: usize, input: &[f64]) -> Vec<f64> {
        let level = if level_high { Level::High } else { Level::Low };
        let spec = match level {
            Level::High => &self.high_spec,
            Level::Low => &self.low_spec,
        };
        let x = Mat { rows: 1, cols: input.len(), data: input.to_vec() };
        let mut acts: Vec<Vec<Mat>> = Vec::with_capacity(upto + 1);
        let mut out = Vec::new();
        for col in self.columns.iter().take(upto + 1) {
            let (params, lat) = match level {
                Level::High => (&col.high, &col.lat_high),
                Level::Low => (&col.low, &col.lat_low),
            };
            let inj = build_injections(spec, lat, &acts, 1);
            let (o, tape) = nn::forward_with_injections(spec, params, &x, inj.as_deref()).unwrap();
            acts.push(tape.block_activations().into_iter().cloned().collect());
            out = o.data;
        }
        out
    }

    // ------------------------------------------------------------------
    // HiSPO
    // ------------------------------------------------------------------

    fn train_subspace(
        &mut self,
        task_index: usize,
        data: &Dataset,
        steps: usize,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<()> {
        if task_index == 0 {
            let model = train_standalone(self, data, steps, cfg, seed)?;
            self.anchors_high.push(model.high_params.clone());
            self.anchors_low.push(model.low_params.clone());
            self.alphas.push([vec![1.0], vec![1.0]]);
            self.current = Some(model);
            return Ok(());
        }
        let (train_split, val_split) = split_dataset(data);
        let (val_high, val_low) = validation_samples(&val_split, self.k, 512);
        // Candidate anchors: continue from the current mixture, with
        // the diversity penalty pulling away from existing anchors.
        let mut candidate = self.current.clone().unwrap();
        let anchors_h = self.anchors_high.clone();
        let anchors_l = self.anchors_low.clone();
        let (lh, ll) = (self.hp.lambda_h, self.hp.lambda_l);
        let penalty = move |net: Net, p: &ParamVector| match net {
            Net::High => cosine_penalty(p, &anchors_h, lh),
            Net::Low | Net::Flat => cosine_penalty(p, &anchors_l, ll),
        };
        policy::train_hier(&mut candidate, &train_split, steps, train_seed(seed), cfg, Some(&penalty))?;

        let extent = self.extent;
        let high_spec = self.high_spec;
        let low_spec = self.low_spec;
        let eval_high = |p: &ParamVector| policy::high_loss_value(&high_spec, p, extent, &val_high);
        let eval_low = |p: &ParamVector| policy::low_loss_value(&low_spec, p, extent, &val_low);

        let (alpha_high, retained_high) = self.settle_level(
            Level::High,
            candidate.high_params.clone(),
            self.hp.eps_h,
            seed ^ 0x68697370,
            &eval_high,
        )?;
        let (alpha_low, retained_low) = self.settle_level(
            Level::Low,
            candidate.low_params.clone(),
            self.hp.eps_l,
            seed ^ 0x6c6f7773,
            &eval_low,
        )?;
        let _ = (retained_high, retained_low);
        let mut model = self.current.clone().unwrap();
        model.high_params = mix_params(&self.anchors_high, &alpha_high);
        model.low_params = mix_params(&self.anchors_low, &alpha_low);
        self.current = Some(model);
        self.alphas.push([alpha_high, alpha_low]);
        Ok(())
    }

    /// Alpha search for one level: best mixture over the old anchors
    /// vs over the extended set; retains the candidate on relative
    /// validation improvement beyond epsilon.
    fn settle_level(
        &mut self,
        level: Level,
        candidate: ParamVector,
        eps: f64,
        seed: u64,
        eval: &dyn Fn(&ParamVector) -> Result<f64>,
    ) -> Result<(Vec<f64>, bool)> {
        let anchors = match level {
            Level::High => &mut self.anchors_high,
            Level::Low => &mut self.anchors_low,
        };
        let n_old = anchors.len();
        let old_alphas = hispo_sample_alphas(n_old, self.hp.m_alphas, seed);
        let (best_old_alpha, l_old) = best_alpha(anchors, &old_alphas, eval)?;
        anchors.push(candidate);
        let new_alphas = hispo_sample_alphas(n_old + 1, self.hp.m_alphas, seed ^ 1);
        let (best_new_alpha, l_new) = best_alpha(anchors, &new_alphas, eval)?;
        // Gaussian NLL can go below zero once the densities exceed
        // one, which would let a relative threshold of 1 still accept
        // candidates. Shift both losses by the provable per-sample
        // lower bound (from the log-std clamp) so the compared values
        // are nonnegative and the threshold keeps its meaning.
        let floor = match level {
            Level::High => std::f64::consts::TAU.ln() + 2.0 * policy::LOG_STD_MIN,
            Level::Low => 0.5 * std::f64::consts::TAU.ln() + policy::LOG_STD_MIN,
        };
        if (l_new - floor) < (1.0 - eps) * (l_old - floor) {
            Ok((best_new_alpha, true))
        } else {
            anchors.pop();
            Ok((best_old_alpha, false))
        }
    }

    // ------------------------------------------------------------------
    // Evaluation-side policies
    // ------------------------------------------------------------------

    /// Policy to evaluate on task `j` after `i = tasks_seen` tasks.
    pub fn policy_for_task(&self, j: usize) -> Result<TaskPolicy<'_>> {
        if self.tasks_seen == 0 {
            return Err(Error::Empty("no tasks trained yet"));
        }
        let idx = j.min(self.tasks_seen - 1);
        Ok(match self.kind {
            StrategyKind::SC1
            | StrategyKind::FT1
            | StrategyKind::FRZ
            | StrategyKind::RPL
            | StrategyKind::EWC
            | StrategyKind::L2 => TaskPolicy::Model(self.current.as_ref().unwrap()),
            StrategyKind::SCN | StrategyKind::FTN => TaskPolicy::Model(&self.snapshots[idx]),
            StrategyKind::PNN => TaskPolicy::Column { state: self, col: idx },
            StrategyKind::HiSPO => {
                let [ah, al] = &self.alphas[idx];
                let mut model = self.current.clone().unwrap();
                model.high_params = mix_params(&self.anchors_high, ah);
                model.low_params = mix_params(&self.anchors_low, al);
                TaskPolicy::Mixture(Box::new(model))
            }
        })
    }
}

/// Derives the optimizer stream seed from the task seed, keeping the
/// model-initialization stream separate.
fn train_seed(seed: u64) -> u64 {
    seed ^ 0x517cc1b727220a95
}

fn fisher_seed(seed: u64) -> u64 {
    seed ^ 0x2545f4914f6cdd1d
}

/// Fresh model trained on one dataset; the shared primitive behind
/// the scratch-trained kinds, and the reference for the snapshot
/// equivalence guarantee.
pub fn train_standalone(
    state: &StrategyState,
    data: &Dataset,
    steps: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<HGCBCModel> {
    let mut model = HGCBCModel::new(state.family, state.extent, state.high_spec.hidden_width, seed);
    policy::train_hier(&mut model, data, steps, train_seed(seed), cfg, None)?;
    Ok(model)
}

/// `(λ/2)·Σ f_i (θ_i − a_i)²` and its gradient `λ·f_i(θ_i − a_i)`.
pub fn quadratic_penalty(
    params: &ParamVector,
    anchor: &ParamVector,
    fisher: &[f64],
    lambda: f64,
) -> (f64, ParamVector) {
    let mut grad = ParamVector::zeros_like(params);
    let mut loss = 0.0;
    for i in 0..params.data.len() {
        let d = params.data[i] - anchor.data[i];
        loss += 0.5 * lambda * fisher[i] * d * d;
        grad.data[i] = lambda * fisher[i] * d;
    }
    (loss, grad)
}

/// Empirical diagonal Fisher of the model's own NLL: mean squared
/// per-sample gradient over `n_samples` draws, per level.
pub fn estimate_fisher_diag(
    model: &HGCBCModel,
    data: &Dataset,
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fh = vec![0.0; model.high_params.len()];
    let mut fl = vec![0.0; model.low_params.len()];
    for _ in 0..n_samples {
        let batch = dataset::sample_hier_batch(data, 1, model.k, 1.0, 0.0, &mut rng)?;
        let (_, gh) = policy::high_loss(&model.high_spec, &model.high_params, model.extent, &batch.high)?;
        let (_, gl) = policy::low_loss(&model.low_spec, &model.low_params, model.extent, &batch.low)?;
        accumulate_squares(&mut fh, &gh.data)?;
        accumulate_squares(&mut fl, &gl.data)?;
    }
    let n = n_samples as f64;
    fh.iter_mut().for_each(|v| *v /= n);
    fl.iter_mut().for_each(|v| *v /= n);
    Ok((fh, fl))
}

fn accumulate_squares(acc: &mut [f64], grad: &[f64]) -> Result<()> {
    for (a, g) in acc.iter_mut().zip(grad) {
        if !g.is_finite() {
            return Err(Error::NonFinite("Fisher gradient sample".into()));
        }
        *a += g * g;
    }
    Ok(())
}

/// `M` uniform-simplex samples plus the vertices and the barycenter.
pub fn hispo_sample_alphas(n_anchors: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n_anchors >= 1 && m >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m + n_anchors + 1);
    for _ in 0..m {
        // Dirichlet(1,...,1) via normalized exponentials.
        let e: Vec<f64> = (0..n_anchors).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = e.iter().sum();
        out.push(e.iter().map(|v| v / s).collect());
    }
    for i in 0..n_anchors {
        let mut v = vec![0.0; n_anchors];
        v[i] = 1.0;
        out.push(v);
    }
    out.push(vec![1.0 / n_anchors as f64; n_anchors]);
    out
}

/// Mean pairwise cosine similarity of flattened anchor parameters.
pub fn cosine_diversity(anchors: &[ParamVector]) -> Result<f64> {
    if anchors.len() < 2 {
        return Err(Error::validation("cosine diversity needs at least 2 anchors"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            total += cosine(&anchors[i].data, &anchors[j].data)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("zero-norm anchor in cosine similarity"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Diversity penalty for a candidate anchor: `λ·mean_j cos(θ, a_j)`
/// with its gradient with respect to θ.
pub fn cosine_penalty(candidate: &ParamVector, anchors: &[ParamVector], lambda: f64) -> (f64, ParamVector) {
    let mut grad = ParamVector::zeros_like(candidate);
    if anchors.is_empty() {
        return (0.0, grad);
    }
    let nt: f64 = candidate.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut loss = 0.0;
    let scale = lambda / anchors.len() as f64;
    for a in anchors {
        let na: f64 = a.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = candidate.data.iter().zip(&a.data).map(|(x, y)| x * y).sum();
        let cos = dot / (nt * na);
        loss += scale * cos;
        for i in 0..grad.data.len() {
            grad.data[i] += scale * (a.data[i] / (nt * na) - cos * candidate.data[i] / (nt * nt));
        }
    }
    (loss, grad)
}

/// Convex combination of anchors with weights `alpha` (a prefix of
/// the anchor list is allowed, since anchors are append-only).
pub fn mix_params(anchors: &[ParamVector], alpha: &[f64]) -> ParamVector {
    assert!(!alpha.is_empty() && alpha.len() <= anchors.len());
    let mut out = ParamVector::zeros_like(&anchors[0]);
    for (a, w) in anchors.iter().zip(alpha) {
        for (o, v) in out.data.iter_mut().zip(&a.data) {
            *o += w * v;
        }
    }
    out
}

fn best_alpha(
    anchors: &[ParamVector],
    alphas: &[Vec<f64>],
    eval: &dyn Fn(&ParamVector) -> Result<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for alpha in alphas {
        let mixed = mix_params(anchors, alpha);
        let loss = eval(&mixed)?;
        if best.as_ref().map_or(true, |(_, b)| loss < *b) {
            best = Some((alpha.clone(), loss));
        }
    }
    Ok(best.unwrap())
}

/// Deterministic 90/10 episode split (every tenth episode held out).
fn split_dataset(data: &Dataset) -> (Dataset, Dataset) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, ep) in data.episodes.iter().enumerate() {
        if i % 10 == 9 {
            val.push(ep.clone());
        } else {
            train.push(ep.clone());
        }
    }
    if val.is_empty() {
        val.push(train.pop().unwrap());
    }
    let mk = |eps: Vec<dataset::Episode>| Dataset {
        maze_name: data.maze_name.clone(),
        episodes: eps,
        generator: data.generator.clone(),
        config: data.config,
    };
    (mk(train), mk(val))
}

/// Fixed (non-relabeled) validation samples for mixture scoring,
/// capped by striding.
fn validation_samples(val: &Dataset, k: usize, cap: usize) -> (Vec<HighSample>, Vec<LowSample>) {
    let total: usize = val.episodes.iter().map(|e| e.transitions.len()).sum();
    let stride = (total / cap).max(1);
    let mut high = Vec::new();
    let mut low = Vec::new();
    let mut counter = 0usize;
    for ep in &val.episodes {
        let last = ep.transitions.len() - 1;
        for (t, tr) in ep.transitions.iter().enumerate() {
            if counter % stride == 0 {
                let subgoal = ep.transitions[(t + k - 1).min(last)].achieved_point;
                high.push(HighSample {
                    obs: tr.obs.0.clone(),
                    goal: tr.goal.point,
                    subgoal,
                });
                low.push(LowSample {
                    obs: tr.obs.0.clone(),
                    subgoal,
                    action: tr.action,
                });
            }
            counter += 1;
        }
    }
    (high, low)
}

fn build_injections(spec: &MLPSpec, lat: &[f64], prev_acts: &[Vec<Mat>], rows: usize) -> Option<Vec<Mat>> {
    if prev_acts.is_empty() {
        return None;
    }
    let w = spec.hidden_width;
    let nb = spec.n_hidden_blocks;
    let zero_bias = vec![0.0; w];
    let mut inj: Vec<Mat> = (0..nb).map(|_| Mat::zeros(rows, w)).collect();
    for (p, acts) in prev_acts.iter().enumerate() {
        for b in 0..nb {
            let off = (p * nb + b) * w * w;
            let contrib = nn::linear(&lat[off..off + w * w], &zero_bias, &acts[b], w);
            for (iv, cv) in inj[b].data.iter_mut().zip(&contrib.data) {
                *iv += cv;
            }
        }
    }
    Some(inj)
}

/// An evaluable policy for a particular task.
pub enum TaskPolicy<'a> {
    Model(&'a HGCBCModel),
    Mixture(Box<HGCBCModel>),
    Column { state: &'a StrategyState, col: usize },
}

impl TaskPolicy<'_> {
    pub fn actor(&self) -> Box<dyn Actor + '_> {
        match self {
            TaskPolicy::Model(m) => Box::new(m.actor()),
            TaskPolicy::Mixture(m) => Box::new(m.actor()),
            TaskPolicy::Column { state, col } => {
                let c = *col;
                let high = move |input: &[f64]| state.column_forward(true, c, input);
                let low = move |input: &[f64]| state.column_forward(false, c, input);
                Box::new(policy::HierActor::new(
                    high,
                    low,
                    policy::default_k(state.family),
                    state.extent,
                ))
            }
        }
    }
}

impl<'a> Actor for Box<dyn Actor + 'a> {
    fn act(
        &mut self,
        obs: &crate::maze::Observation,
        goal: &crate::maze::Goal,
        step_index: usize,
    ) -> crate::maze::Action {
        (**self).act(obs, goal, step_index)
    }
}

// ---------------------------------------------------------------------------
// Strategy checkpoints (write side)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StrategyLedgers<'a> {
    kind: &'a str,
    hyperparams: &'a Hyperparams,
    trn_minutes: &'a [f64],
    param_ledger: &'a [ParamLedgerEntry],
    replay_transitions: usize,
    alphas: &'a [[Vec<f64>; 2]],
}

fn write_raw_f64(path: &std::path::Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes the strategy's evaluable artifacts: `ledgers.json` plus one
/// `task{i}` subdirectory per consumed task with that task's policy
/// parameters (model checkpoints where the policy is a plain model;
/// column/anchor parameter files otherwise).
pub fn save_strategy(dir: &std::path::Path, state: &StrategyState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ledgers = StrategyLedgers {
        kind: state.kind.name(),
        hyperparams: &state.hp,
        trn_minutes: &state.trn_minutes,
        param_ledger: &state.param_ledger,
        replay_transitions: state.replay_transitions(),
        alphas: &state.alphas,
    };
    std::fs::write(dir.join("ledgers.json"), serde_json::to_string_pretty(&ledgers).unwrap())?;
    if let Some([fh, fl]) = &state.fisher {
        write_raw_f64(&dir.join("fisher_high.f64"), fh)?;
        write_raw_f64(&dir.join("fisher_low.f64"), fl)?;
    }
    for t in 0..state.tasks_seen {
        let tdir = dir.join(format!("task{t}"));
        std::fs::create_dir_all(&tdir)?;
        match state.policy_for_task(t)? {
            TaskPolicy::Model(m) => policy::save_hier(&tdir, m)?,
            TaskPolicy::Mixture(m) => policy::save_hier(&tdir, &m)?,
            TaskPolicy::Column { state, col } => {
                let c = &state.columns[col];
                nn::save_params(&tdir.join("high.ckpt"), &state.high_spec, &c.high)?;
                nn::save_params(&tdir.join("low.ckpt"), &state.low_spec, &c.low)?;
                write_raw_f64(&tdir.join("lat_high.f64"), &c.lat_high)?;
                write_raw_f64(&tdir.join("lat_low.f64"), &c.lat_low)?;
            }
        }
    }
    Ok(())
}
