//! `redungroup` command-line driver.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 when an input is missing
//! or fails validation.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use redungroup::grouping::Mode;
use redungroup::robotsim::PathCenter;

#[derive(Parser, Debug)]
#[command(name = "redungroup", version, about = "Group redundant actuators by learned function and placement")]
pub struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

/// Top-level seed. Each stage adds its own index (robot 0, sampling 1,
/// split 2, autoencoder 3, distance noise 4, grouping 5).
#[derive(Args, Debug, Clone)]
pub struct SeedArg {
    /// Top-level seed; overrides REDUNGROUP_SEED and any config file.
    #[arg(long, env = "REDUNGROUP_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct GroupingArgs {
    /// Scoring mode: func, spac or both.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Number of groups.
    #[arg(long)]
    pub ngroups: Option<usize>,
    /// Counted iterations of the grouping loop.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Weight of the spatial term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Minimum channels per group.
    #[arg(long)]
    pub min_x: Option<usize>,
    /// Minimum latent units per group.
    #[arg(long)]
    pub min_z: Option<usize>,
    /// Count constraint-blocked picks as iterations.
    #[arg(long)]
    pub count_blocked: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Rows per mini-batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a synthetic tendon-driven robot.
    Synth {
        /// Robot layout as JSON; defaults to 4 chains of 3 joints.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
        /// Robot model output.
        #[arg(long, default_value = "robot.json")]
        out: PathBuf,
    },
    /// Sample muscle lengths at random postures.
    Sample {
        #[arg(long)]
        robot: PathBuf,
        /// Number of postures.
        #[arg(short = 'n', long, default_value_t = 100_000)]
        samples: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Dataset CSV output.
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Z-score every channel of a dataset.
    Normalize {
        #[arg(long)]
        data: PathBuf,
        /// Normalized dataset output.
        #[arg(long, default_value = "normalized.csv")]
        out: PathBuf,
        /// Per-channel mean and standard deviation output.
        #[arg(long, default_value = "stats.json")]
        stats: PathBuf,
    },
    /// Train the bottleneck autoencoder.
    TrainAe {
        /// Dataset CSV, raw or normalized.
        #[arg(long)]
        data: PathBuf,
        /// Statistics marking `--data` as already normalized.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Training settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Latent units.
        #[arg(long, default_value_t = 12)]
        latent: usize,
        /// Hidden layer width.
        #[arg(long, default_value_t = 300)]
        hidden: usize,
        /// Share of rows used for training; the rest is the test set.
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Model checkpoint output.
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Per-epoch loss CSV output.
        #[arg(long, default_value = "train_report.csv")]
        report: PathBuf,
    },
    /// Build the relational graph from a trained model and the geometry.
    BuildGraph {
        #[arg(long)]
        model: PathBuf,
        /// Robot model to measure distances on.
        #[arg(long, required_unless_present = "distances")]
        robot: Option<PathBuf>,
        /// Square distance matrix CSV, used instead of `--robot`.
        #[arg(long, conflicts_with = "robot")]
        distances: Option<PathBuf>,
        /// Muscle path center: arc-midpoint or centroid.
        #[arg(long, value_parser = parse_center, default_value = "arc-midpoint")]
        center: PathCenter,
        /// Standard deviation of distance noise, meters.
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        /// Keep the sign of functional weights.
        #[arg(long)]
        signed: bool,
        /// Fold decoder batch-norm scales into the functional matrix.
        #[arg(long)]
        fold_batchnorm: bool,
        #[command(flatten)]
        seed: SeedArg,
        /// Graph JSON output.
        #[arg(long, default_value = "graph.json")]
        out: PathBuf,
    },
    /// Group the graph's vertices.
    Group {
        #[arg(long)]
        graph: PathBuf,
        /// Grouping settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        grouping: GroupingArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Grouping result output.
        #[arg(long, default_value = "grouping.json")]
        out: PathBuf,
    },
    /// Score a grouping against the robot's geometric groups.
    Eval {
        /// Grouping result JSON.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        robot: PathBuf,
        /// Allow each proposed group to match only one truth group.
        #[arg(long)]
        bijective: bool,
        /// Report JSON output.
        #[arg(long, default_value = "consistency.json")]
        out: PathBuf,
    },
    /// Repeat graph construction and grouping in every mode.
    Trials {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        robot: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Modes to run, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "func,spac,both")]
        modes: Vec<Mode>,
        #[command(flatten)]
        grouping: GroupingArgs,
        #[arg(long, value_parser = parse_center, default_value = "arc-midpoint")]
        center: PathCenter,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        #[arg(long)]
        bijective: bool,
        /// Trials run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Output directory.
        #[arg(long, default_value = "trials")]
        out_dir: PathBuf,
    },
    /// Train one autoencoder per latent size and run the trials on each.
    SweepNz {
        /// Dataset CSV, raw or normalized.
        #[arg(long)]
        data: PathBuf,
        /// Statistics marking `--data` as already normalized.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        robot: PathBuf,
        /// Latent sizes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Hidden layer width.
        #[arg(long, default_value_t = 300)]
        hidden: usize,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        grouping: GroupingArgs,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        /// Latent sizes processed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Table CSV output; a JSON copy is written beside it.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Compare the full autoencoder with per-group autoencoders on little data.
    RetrainSplit {
        /// Dataset CSV, raw or normalized.
        #[arg(long)]
        data: PathBuf,
        /// Statistics marking `--data` as already normalized.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Grouping result JSON.
        #[arg(long)]
        result: PathBuf,
        /// Rows drawn from the dataset.
        #[arg(long, default_value_t = 1000)]
        low_data: usize,
        /// Hidden width of the full model; grouped models share the same parameter budget.
        #[arg(long, default_value_t = 300)]
        hidden: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Report JSON output.
        #[arg(long, default_value = "retrain.json")]
        out: PathBuf,
        /// Per-epoch loss curves CSV output.
        #[arg(long, default_value = "retrain_curves.csv")]
        curves: PathBuf,
    },
    /// Merge vertices along the heaviest edges until the group count is reached.
    BaselineMst {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 12)]
        ngroups: usize,
        /// Grouping result output.
        #[arg(long, default_value = "baseline.json")]
        out: PathBuf,
    },
    /// Render the graph in Graphviz format.
    ExportDot {
        #[arg(long)]
        graph: PathBuf,
        /// Grouping result used to color vertices.
        #[arg(long)]
        result: Option<PathBuf>,
        /// Leave out edges with smaller absolute weight.
        #[arg(long, default_value_t = 0.0)]
        min_weight: f64,
        #[arg(long, default_value = "graph.dot")]
        out: PathBuf,
    },
    /// Run synth, sample, normalize, train, graph, trials and evaluation.
    Pipeline {
        /// Pipeline settings as JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trials per mode.
        #[arg(long)]
        trials: Option<usize>,
        /// Postures to sample.
        #[arg(long)]
        samples: Option<usize>,
        /// Autoencoder training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Worker threads for the trials.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write the sampled dataset.
        #[arg(long)]
        save_data: bool,
        #[command(flatten)]
        seed: SeedArg,
        /// Output directory.
        #[arg(long, default_value = "pipeline_out")]
        out_dir: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: redungroup::Error| e.to_string())
}

fn parse_center(s: &str) -> Result<PathCenter, String> {
    match s.replace('_', "-").as_str() {
        "arc-midpoint" => Ok(PathCenter::ArcMidpoint),
        "centroid" => Ok(PathCenter::Centroid),
        other => Err(format!("unknown path center {other:?} (expected arc-midpoint or centroid)")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
