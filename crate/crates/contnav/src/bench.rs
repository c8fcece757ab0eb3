//! Experiment orchestration: task streams, run configuration, and
//! report emission.
//!
//! A run is one JSON config: a stream, a set of strategy methods, and
//! seeds. For every (method, seed) cell the stream is trained task by
//! task, the success matrix is populated after each task, and the six
//! metrics are computed; cells are crash-isolated and aggregated as
//! mean ± sample std across seeds into `metrics.json`, `metrics.csv`,
//! and `radar.json`. Everything except the wall-clock timing fields
//! is deterministic in the config.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::continual::{Hyperparams, ParamLedgerEntry, StrategyKind, StrategyState};
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::maze::{self, MazeSpec};
use crate::metrics::{self, SuccessMatrix};
use crate::policy::{HGCBCModel, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub tasks: Vec<String>,
}

/// The six built-in task streams.
pub fn builtin_streams() -> Vec<StreamSpec> {
    let mk = |name: &str, tasks: &[&str]| StreamSpec {
        name: name.into(),
        tasks: tasks.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        mk("AR1", &["A-LOOX", "A-HXOX", "A-LXOX", "A-HXOX"]),
        mk("AR2", &["A-HXOO", "A-HOOX", "A-LOOX", "A-LXOO"]),
        mk("AT1", &["A-HOOX", "A-HXOX", "A-HXOX", "A-HOOX"]),
        mk("AT2", &["A-LOOO", "A-LOOO", "A-LXOX", "A-LXOO"]),
        mk("ST1", &["S-BASE", "S-OXO", "S-BASE", "S-OOX"]),
        mk("ST2", &["S-BASE", "S-OXX", "S-XOO", "S-OXX"]),
    ]
}

pub fn builtin_stream(name: &str) -> Result<StreamSpec> {
    builtin_streams()
        .into_iter()
        .find(|s| s.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Unknown {
            kind: "stream",
            name: name.to_string(),
            options: builtin_streams().into_iter().map(|s| s.name).collect(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn width(&self) -> usize {
        match self {
            Scale::Desk => 64,
            Scale::Paper => 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DataSource {
    /// Generate scripted-expert datasets on the fly.
    Generate,
    /// Load previously generated `<maze>.jsonl` files from a directory.
    Load { dir: PathBuf },
}

fn default_eval_episodes() -> usize {
    100
}
fn default_inf_passes() -> usize {
    10_000
}
fn default_noise() -> f64 {
    0.1
}
fn default_data_seed() -> u64 {
    9000
}
fn default_data() -> DataSource {
    DataSource::Generate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub stream: String,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub steps_per_task: usize,
    pub scale: Scale,
    #[serde(default = "default_data")]
    pub data: DataSource,
    pub out_dir: PathBuf,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_inf_passes")]
    pub inf_passes: usize,
    /// Episodes per generated dataset (defaults per family).
    #[serde(default)]
    pub episodes_per_task: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    /// Override the network width (otherwise set by `scale`).
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub save_checkpoints: bool,
}

impl RunConfig {
    pub fn width(&self) -> usize {
        self.width.unwrap_or_else(|| self.scale.width())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::validation(format!("run config: {e}")))
}

/// Six metric values of one trained (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub per: f64,
    pub bwt: f64,
    pub fwt: f64,
    pub mem_inf: f64,
    pub mem_train: f64,
    /// Milliseconds per decision; wall-clock, zeroed for byte
    /// comparison.
    pub inf_ms: f64,
    /// Minutes of training; wall-clock, zeroed for byte comparison.
    pub trn_min: f64,
    pub matrix: SuccessMatrix,
    pub trn_minutes: Vec<f64>,
    pub param_ledger: Vec<ParamLedgerEntry>,
    pub replay_transitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellResult {
    Ok {
        method: String,
        seed: u64,
        metrics: CellMetrics,
    },
    Failed {
        method: String,
        seed: u64,
        error: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(vals: &[f64]) -> MeanStd {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = if vals.len() > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

pub const METRIC_NAMES: [&str; 7] = ["PER", "BWT", "FWT", "MEM", "MEM_TRAIN", "INF", "TRN"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Keyed by metric name (PER/BWT/FWT/MEM/MEM_TRAIN/INF/TRN).
    pub metrics: BTreeMap<String, MeanStd>,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stream: String,
    pub tasks: Vec<String>,
    pub config: RunConfig,
    pub methods: Vec<MethodSummary>,
    pub cells: Vec<CellResult>,
}

fn cell_values(m: &CellMetrics) -> [f64; 7] {
    [m.per, m.bwt, m.fwt, m.mem_inf, m.mem_train, m.inf_ms, m.trn_min]
}

fn resolve_datasets(config: &RunConfig, stream: &StreamSpec) -> Result<Vec<Dataset>> {
    let mut by_name: BTreeMap<String, Dataset> = BTreeMap::new();
    for (i, name) in stream.tasks.iter().enumerate() {
        if by_name.contains_key(name) {
            continue;
        }
        let ds = match &config.data {
            DataSource::Generate => {
                let maze = maze::builtin_maze(name)?;
                let episodes = config
                    .episodes_per_task
                    .unwrap_or_else(|| dataset::default_episodes(maze.family));
                dataset::generate_dataset(&maze, episodes, config.noise, config.data_seed + i as u64)?
            }
            DataSource::Load { dir } => dataset::load_dataset(&dir.join(format!("{name}.jsonl")))?,
        };
        by_name.insert(name.clone(), ds);
    }
    Ok(stream.tasks.iter().map(|n| by_name[n].clone()).collect())
}

/// Trains and evaluates one (method, seed) cell.
fn run_cell(
    config: &RunConfig,
    stream: &StreamSpec,
    mazes: &[MazeSpec],
    datasets: &[Dataset],
    kind: StrategyKind,
    seed: u64,
) -> Result<CellMetrics> {
    let family = mazes[0].family;
    let n = stream.tasks.len();
    let width = config.width();
    let mut state = StrategyState::new(kind, family, width, Hyperparams::default());
    let train_cfg = TrainConfig::for_family(family);
    // Fixed evaluation seed base per cell seed; identical across
    // methods so matrix rows are comparable.
    let eval_seed = 0x5eed_0000u64 + seed.wrapping_mul(104_729);
    let mut matrix = SuccessMatrix::new(n, config.eval_episodes, eval_seed);
    for (j, maze) in mazes.iter().enumerate() {
        let untrained = HGCBCModel::new(family, state.extent, width, seed ^ (0xbead_0000 + j as u64));
        matrix.sigma_rand[j] =
            metrics::evaluate_success(|| untrained.actor(), maze, config.eval_episodes, eval_seed);
    }
    for i in 0..n {
        let task_seed = seed.wrapping_add(1 + i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        state.train_next(i, &datasets[i], config.steps_per_task, &train_cfg, task_seed)?;
        for (j, maze) in mazes.iter().enumerate() {
            let policy = state.policy_for_task(j)?;
            matrix.sigma[i][j] =
                metrics::evaluate_success(|| policy.actor(), maze, config.eval_episodes, eval_seed);
        }
    }
    let per = metrics::compute_per(&matrix)?;
    let bwt = metrics::compute_bwt(&matrix)?;
    let fwt = metrics::compute_fwt(&matrix)?;
    let base = state.base_param_count();
    let mem_inf = metrics::compute_mem(state.inference_param_count(), base)?;
    let mem_train = metrics::compute_mem(state.training_param_count(), base)?;
    let (probe_state, probe_goal) =
        maze::reset(&mazes[0], &maze::SimConfig::for_family(family), eval_seed)?;
    let probe_obs = maze::observe(&mazes[0], &probe_state);
    let final_policy = state.policy_for_task(n - 1)?;
    let mut actor = final_policy.actor();
    let inf_ms = metrics::measure_inf(&mut actor, &probe_obs, &probe_goal, config.inf_passes);
    let trn_min = metrics::record_trn(&state.trn_minutes)?;
    if config.save_checkpoints {
        let dir = config
            .out_dir
            .join("checkpoints")
            .join(kind.name())
            .join(format!("seed{seed}"));
        crate::continual::save_strategy(&dir, &state)?;
    }
    Ok(CellMetrics {
        per,
        bwt,
        fwt,
        mem_inf,
        mem_train,
        inf_ms,
        trn_min,
        matrix,
        trn_minutes: state.trn_minutes.clone(),
        param_ledger: state.param_ledger.clone(),
        replay_transitions: state.replay_transitions(),
    })
}

/// Executes a full run and writes `metrics.json`, `metrics.csv`, and
/// `radar.json` into the output directory.
pub fn run(config: &RunConfig) -> Result<MetricsReport> {
    if config.methods.is_empty() || config.seeds.is_empty() {
        return Err(Error::validation("need at least one method and one seed"));
    }
    let stream = builtin_stream(&config.stream)?;
    let kinds: Vec<StrategyKind> = config
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_>>()?;
    let mazes: Vec<MazeSpec> = stream
        .tasks
        .iter()
        .map(|n| maze::builtin_maze(n))
        .collect::<Result<_>>()?;
    let datasets = resolve_datasets(config, &stream)?;
    std::fs::create_dir_all(&config.out_dir)?;

    let mut cells = Vec::new();
    for kind in &kinds {
        for &seed in &config.seeds {
            // Crash isolation: a failing cell is recorded, the rest
            // proceed.
            match run_cell(config, &stream, &mazes, &datasets, *kind, seed) {
                Ok(metrics) => cells.push(CellResult::Ok {
                    method: kind.name().into(),
                    seed,
                    metrics,
                }),
                Err(e) => cells.push(CellResult::Failed {
                    method: kind.name().into(),
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }

    let mut methods = Vec::new();
    for kind in &kinds {
        let ok: Vec<&CellMetrics> = cells
            .iter()
            .filter_map(|c| match c {
                CellResult::Ok { method, metrics, .. } if method == kind.name() => Some(metrics),
                _ => None,
            })
            .collect();
        let failed = config.seeds.len() - ok.len();
        let mut map = BTreeMap::new();
        if !ok.is_empty() {
            for (mi, name) in METRIC_NAMES.iter().enumerate() {
                let vals: Vec<f64> = ok.iter().map(|m| cell_values(m)[mi]).collect();
                map.insert(name.to_string(), mean_std(&vals));
            }
        }
        methods.push(MethodSummary {
            method: kind.name().into(),
            metrics: map,
            seeds_ok: ok.len(),
            seeds_failed: failed,
        });
    }

    let report = MetricsReport {
        stream: stream.name.clone(),
        tasks: stream.tasks.clone(),
        config: config.clone(),
        methods,
        cells,
    };
    write_reports(&config.out_dir, &report)?;
    Ok(report)
}

fn write_reports(dir: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(report).unwrap(),
    )?;
    std::fs::write(dir.join("metrics.csv"), render_csv(report))?;
    std::fs::write(
        dir.join("radar.json"),
        serde_json::to_string_pretty(&render_radar(report)).unwrap(),
    )?;
    Ok(())
}

pub fn render_csv(report: &MetricsReport) -> String {
    let mut out = String::from("method,stream,metric,mean,std\n");
    for m in &report.methods {
        for name in METRIC_NAMES {
            if let Some(ms) = m.metrics.get(name) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.method, report.stream, name, ms.mean, ms.std
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarEntry {
    pub method: String,
    /// Six axes normalized to [0, 1] by min-max over methods; 1 is
    /// always the favorable end (MEM/INF/TRN are inverted).
    pub axes: BTreeMap<String, f64>,
}

pub fn render_radar(report: &MetricsReport) -> Vec<RadarEntry> {
    const AXES: [(&str, bool); 6] = [
        ("PER", false),
        ("BWT", false),
        ("FWT", false),
        ("MEM", true),
        ("INF", true),
        ("TRN", true),
    ];
    let methods: Vec<&MethodSummary> = report.methods.iter().filter(|m| m.seeds_ok > 0).collect();
    let mut out = Vec::new();
    for m in &methods {
        let mut axes = BTreeMap::new();
        for (name, invert) in AXES {
            let vals: Vec<f64> = methods.iter().map(|mm| mm.metrics[name].mean).collect();
            let (lo, hi) = vals
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            let v = m.metrics[name].mean;
            let norm = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
            axes.insert(name.to_string(), if invert { 1.0 - norm } else { norm });
        }
        out.push(RadarEntry {
            method: m.method.clone(),
            axes,
        });
    }
    out
}
