//! `prembed`: directed-graph embeddings in pseudo-Riemannian manifolds.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prembed::commands;
use prembed::config::{ExperimentConfig, RawConfig};

#[derive(Parser)]
#[command(name = "prembed", version, about = "Directed graph embeddings in flat and curved spacetimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured graph as a tab-separated edge list.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Edge-list output path (default: <output dir>/graph.tsv).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Train an embedding and write checkpoint, loss trace, and metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved checkpoint against the configured split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Grid-search over comma-separated config values.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run a canned toy experiment.
    Toy {
        #[command(flatten)]
        common: Common,
        /// One of: cycle5, chain10, transitive10, tripartite.
        #[arg(long)]
        name: String,
    },
    /// Export an edge-probability grid over a 2-coordinate manifold.
    Heatmap {
        #[command(flatten)]
        common: Common,
        /// CSV output path (default: <output dir>/heatmap.csv).
        #[arg(long)]
        file: Option<PathBuf>,
        /// Coordinate range as `lo,hi` on both axes.
        #[arg(long, default_value = "-2.0,2.0")]
        bounds: String,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
    },
}

fn load_config(common: &Common) -> prembed::Result<ExperimentConfig> {
    let raw = match &common.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    let mut cfg = ExperimentConfig::from_raw(&raw)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> prembed::Result<()> {
    match cli.command {
        Command::Generate { common, file } => {
            let cfg = load_config(&common)?;
            let out = file.unwrap_or_else(|| cfg.output_dir.join("graph.tsv"));
            commands::cmd_generate(&cfg, &out, common.quiet)
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            commands::cmd_train(&cfg, common.quiet)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            commands::cmd_eval(&cfg, &checkpoint, common.quiet)
        }
        Command::Sweep { common } => {
            let mut raw = match &common.config {
                Some(path) => RawConfig::from_file(path)?,
                None => RawConfig::default(),
            };
            if let Some(seed) = common.seed {
                raw.set("train.seed", seed);
            }
            if let Some(out) = &common.out {
                raw.set("output.dir", out.display());
            }
            commands::cmd_sweep(&raw, common.quiet).map(|_| ())
        }
        Command::Toy { common, name } => {
            commands::cmd_toy(&name, common.seed.unwrap_or(0), common.quiet)
        }
        Command::Heatmap { common, file, bounds, resolution } => {
            let cfg = load_config(&common)?;
            let (lo, hi) = bounds
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .ok_or_else(|| {
                    prembed::Error::Config(format!("bounds must be `lo,hi`, got {bounds:?}"))
                })?;
            let out = file.unwrap_or_else(|| cfg.output_dir.join("heatmap.csv"));
            commands::cmd_heatmap(&cfg, (lo, hi), resolution, &out, common.quiet)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
