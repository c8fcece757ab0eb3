//! Command-line entry point: dataset generation, stream training,
//! checkpoint evaluation, and report retrieval.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or unknown
//! maze/stream/method names), 2 runtime failure.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use contnav::{bench, dataset, exec, maze, metrics, policy, Error};

#[derive(Parser)]
#[command(name = "contnav", version, about = "Continual goal-conditioned maze navigation benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the built-in maze names.
    ListMazes,
    /// List the built-in task streams.
    ListStreams,
    /// Generate a scripted-expert dataset for one maze.
    GenData {
        #[arg(long)]
        maze: String,
        /// Episodes to record (defaults per maze family).
        #[arg(long)]
        episodes: Option<usize>,
        /// Expert action-noise probability.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full stream experiment from a JSON config.
    TrainStream {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a model checkpoint directory on a maze.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        maze: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a previously written run report.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
    Radar,
}

fn main() -> ExitCode {
    exec::init_pool();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                // Unknown names are usage errors; everything else is
                // a runtime failure.
                Error::Unknown { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn execute(cli: Cli) -> contnav::Result<()> {
    match cli.cmd {
        Cmd::ListMazes => {
            for m in maze::builtin_mazes() {
                println!("{}", m.name);
            }
        }
        Cmd::ListStreams => {
            for s in bench::builtin_streams() {
                println!("{}: {}", s.name, s.tasks.join(" -> "));
            }
        }
        Cmd::GenData {
            maze: name,
            episodes,
            noise,
            seed,
            out,
        } => {
            let spec = maze::builtin_maze(&name)?;
            let n = episodes.unwrap_or_else(|| dataset::default_episodes(spec.family));
            let ds = dataset::generate_dataset(&spec, n, noise, seed)?;
            dataset::save_dataset(&ds, &out)?;
            let wins = ds.episodes.iter().filter(|e| e.success).count();
            println!(
                "wrote {} episodes ({} successful, {} transitions) to {}",
                n,
                wins,
                ds.total_transitions(),
                out.display()
            );
        }
        Cmd::TrainStream { config } => {
            let cfg = bench::load_config(&config)?;
            let report = bench::run(&cfg)?;
            let failed: usize = report
                .methods
                .iter()
                .map(|m| m.seeds_failed)
                .sum();
            println!(
                "stream {} done: {} methods x {} seeds, {} failed cells; reports in {}",
                report.stream,
                report.methods.len(),
                cfg.seeds.len(),
                failed,
                cfg.out_dir.display()
            );
        }
        Cmd::Evaluate {
            checkpoint,
            maze: name,
            episodes,
            seed,
        } => {
            let spec = maze::builtin_maze(&name)?;
            let rate = match policy::load_hier(&checkpoint) {
                Ok(model) => {
                    metrics::evaluate_success(|| model.actor(), &spec, episodes, seed)
                }
                Err(_) => {
                    let model = policy::load_flat(&checkpoint)?;
                    metrics::evaluate_success(|| model.actor(), &spec, episodes, seed)
                }
            };
            println!("success_rate {rate}");
        }
        Cmd::Report { run, format } => {
            let file = match format {
                ReportFormat::Json => "metrics.json",
                ReportFormat::Csv => "metrics.csv",
                ReportFormat::Radar => "radar.json",
            };
            let text = std::fs::read_to_string(run.join(file))?;
            print!("{text}");
        }
    }
    Ok(())
}
