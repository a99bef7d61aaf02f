//! `coloc` — drive the association-log pipeline stage by stage.
//!
//! Stages share a run directory (`<root>/<run>/<stage>/`); each consumes
//! its predecessors' artifacts and leaves a `manifest.json` recording
//! config and input hashes, seeds, overrides, and timings. Identical
//! manifests (ignoring timings) mean identical outputs.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;

use anyhow::Context as _;
use clap::{Parser, Subcommand};

use stages::{Ctx, OutputFormat};

#[derive(Parser)]
#[command(
    name = "coloc",
    version,
    about = "Dwell, collocation, attendance, feature, and model pipeline for WiFi association logs"
)]
struct Cli {
    /// Run name; stages share <root>/<run>/<stage>/ directories.
    #[arg(long, global = true, default_value = "default")]
    run: String,
    /// Directory that holds runs.
    #[arg(long, global = true, default_value = "runs")]
    root: PathBuf,
    /// Optional TOML config ([simulate], [pipeline], [segment], [collocate], [train]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Affects speed, never output.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic campus scenario with ground truth.
    Simulate {
        /// Scenario seed (default 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the cohort size from [simulate].
        #[arg(long)]
        users: Option<usize>,
        /// Override the study length in weeks from [simulate].
        #[arg(long)]
        weeks: Option<usize>,
    },
    /// Load raw artifacts, cross-check them, and write canonical copies.
    Ingest {
        /// Source directory (default: this run's simulate output). Needs
        /// logs.csv, registry.csv, roster.csv, lectures.csv, meetings.csv;
        /// attendance.csv and scores.csv are optional.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Classify AP transitions and build per-user dwell segments.
    Segment {
        /// Fix the swift/linger split instead of learning it, e.g. "233s".
        #[arg(long)]
        mobility_threshold: Option<String>,
        /// Fix the in-room disconnection tolerance, e.g. "76min".
        #[arg(long)]
        disconnection_threshold: Option<String>,
    },
    /// Find same-room overlap episodes and bridge short covered gaps.
    Collocate {
        /// Fix the bridge threshold instead of learning it, e.g. "11m7s".
        #[arg(long)]
        gap_threshold: Option<String>,
        /// Learn the bridge threshold from every user pair rather than
        /// from project groupmates only.
        #[arg(long)]
        gap_learn_all_pairs: bool,
    },
    /// Score inferred lecture attendance against ground truth.
    Validate,
    /// Extract weekly behavioral features and semester summaries.
    Features,
    /// Train and cross-validate performance models on the features.
    Train {
        /// Cross-validation shuffle seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Upper bound of the per-fold feature-count search.
        #[arg(long)]
        max_k: Option<usize>,
        /// Outer cross-validation folds.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Interaction graphs, space usage, and lecture punctuality.
    Report {
        /// Artifact format.
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("--jobs")?;
    }
    let (file_config, raw) = config::load(cli.config.as_deref())?;
    let ctx = Ctx {
        run: cli.run.clone(),
        run_dir: cli.root.join(&cli.run),
        config: file_config,
        config_hash: manifest::sha256_hex(&raw),
    };
    match cli.command {
        Command::Simulate { seed, users, weeks } => {
            stages::simulate(&ctx, &stages::SimulateArgs { seed, users, weeks })
        }
        Command::Ingest { input_dir } => stages::ingest(&ctx, input_dir.as_deref()),
        Command::Segment {
            mobility_threshold,
            disconnection_threshold,
        } => stages::segment(
            &ctx,
            &stages::SegmentArgs {
                mobility_threshold,
                disconnection_threshold,
            },
        ),
        Command::Collocate {
            gap_threshold,
            gap_learn_all_pairs,
        } => stages::collocate(
            &ctx,
            &stages::CollocateArgs {
                gap_threshold,
                gap_learn_all_pairs,
            },
        ),
        Command::Validate => stages::validate(&ctx),
        Command::Features => stages::features(&ctx),
        Command::Train {
            seed,
            max_k,
            folds,
        } => stages::train(&ctx, &stages::TrainArgs { seed, max_k, folds }),
        Command::Report { format } => stages::report(&ctx, format),
    }
}
