mod commands;

use std::path::PathBuf;

use anyhow::Result;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

/// Substation failure prediction pipeline.
///
/// Log verbosity follows the STGT_LOG environment variable (error, warn,
/// info, debug, trace); the default is info.
#[derive(Parser)]
#[command(name = "stgt", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory, created if needed.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Temporal history features in the static pool.
    #[arg(long, global = true, value_name = "BOOL")]
    temporal: Option<bool>,
    /// Spatial (coordinate) features in the static pool.
    #[arg(long, global = true, value_name = "BOOL")]
    spatial: Option<bool>,
    /// Graph centrality features in the static pool.
    #[arg(long, global = true, value_name = "BOOL")]
    topology: Option<bool>,
    /// Cause features in the static pool.
    #[arg(long, global = true, value_name = "BOOL")]
    cause: Option<bool>,
    /// Calendar columns in the input windows.
    #[arg(long, global = true, value_name = "BOOL")]
    calendar: Option<bool>,
    /// Days-since-start column in the input windows.
    #[arg(long, global = true, value_name = "BOOL")]
    time_counter: Option<bool>,
}

#[derive(Args)]
struct Inputs {
    /// Substation metadata CSV.
    #[arg(long)]
    sites: PathBuf,
    /// Daily failure counts CSV.
    #[arg(long)]
    series: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic network with failure logs.
    Synth,
    /// Aggregate an event log into filtered daily counts.
    Ingest {
        #[arg(long)]
        events: PathBuf,
    },
    /// Build the proximity graph and its centrality features.
    Graph {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Build the static pool, the windowed samples and their split.
    Featurize {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Rank static features by bootstrap forest importance.
    Select {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Train the graph transformer and score validation and test.
    TrainStgt {
        #[command(flatten)]
        inputs: Inputs,
        /// selected.csv from `select`; otherwise the enabled groups are used.
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Train the boosted-tree baseline and score validation and test.
    TrainGbt {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Choose the threshold on validation and report metrics with intervals.
    Evaluate {
        /// Directory written by `train-stgt` or `train-gbt`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Next-day probabilities from a saved graph transformer.
    Predict {
        /// Directory written by `train-stgt`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        series: PathBuf,
        /// Last observed day; defaults to the latest day in the series.
        #[arg(long)]
        day: Option<NaiveDate>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STGT_LOG", "info")).init();
    let cli = Cli::parse();
    let cfg = commands::load_config(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::Synth => commands::synth(&cfg, out),
        Command::Ingest { events } => commands::ingest(&cfg, &events, out),
        Command::Graph { inputs } => commands::graph(&cfg, &inputs, out),
        Command::Featurize { inputs } => commands::featurize(&cfg, &inputs, out),
        Command::Select { inputs } => commands::select(&cfg, &inputs, out),
        Command::TrainStgt { inputs, selection } => commands::train_stgt(&cfg, &inputs, selection.as_deref(), out),
        Command::TrainGbt { inputs, selection } => commands::train_gbt(&cfg, &inputs, selection.as_deref(), out),
        Command::Evaluate { run } => commands::evaluate(&cfg, &run, out),
        Command::Predict { run, series, day } => commands::predict(&cfg, &run, &series, day, out),
    }
}
