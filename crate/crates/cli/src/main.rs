use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;

use mdsgnn::Error;

#[derive(Parser)]
#[command(
    name = "mdsgnn",
    version,
    about = "Node classification on graphs with missing features and edges"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (meta.txt, edges.tsv, features.tsv, ...).
    #[arg(long)]
    data: PathBuf,
    /// key = value configuration file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set epochs=100.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for metrics and tables.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SeedArgs {
    /// Number of seeds to run.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Mask node features and drop edges of a dataset.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        feature_missing: f64,
        #[arg(long, default_value_t = 0.5)]
        edge_missing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train once and write metrics plus a checkpoint.
    Train {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train over several seeds and summarize test accuracy.
    Run {
        #[command(flatten)]
        common: TrainArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        /// mdsgnn or gcn.
        #[arg(long, default_value = "mdsgnn")]
        method: String,
    },
    /// Multi-seed run with auxiliary losses removed.
    Ablate {
        #[command(flatten)]
        common: TrainArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        /// rec, cl or both.
        #[arg(long)]
        drop: String,
    },
    /// Multi-seed runs along one configuration axis.
    Sweep {
        #[command(flatten)]
        common: TrainArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        /// feature_missing, edge_missing, k or L.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Finite-difference check of every differentiable component.
    Gradcheck,
    /// Write a stochastic block model benchmark dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        nodes_per_class: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
}

/// 1 usage/config, 2 data, 3 numerical.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::Data { .. } | Error::Io { .. } | Error::Shape(_) => 2,
        Error::NonFinite { .. } | Error::Numerical(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Command::Corrupt {
            input,
            out,
            feature_missing,
            edge_missing,
            seed,
        } => commands::corrupt(&input, &out, feature_missing, edge_missing, seed),
        Command::Train { common, seed } => commands::train(&common, seed),
        Command::Run { common, seeds, method } => commands::run(&common, &seeds, &method),
        Command::Ablate { common, seeds, drop } => commands::ablate(&common, &seeds, &drop),
        Command::Sweep {
            common,
            seeds,
            axis,
            values,
        } => commands::sweep(&common, &seeds, &axis, &values),
        Command::Gradcheck => commands::gradcheck(),
        Command::Synth {
            out,
            seed,
            nodes_per_class,
            classes,
        } => commands::synth(&out, seed, nodes_per_class, classes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(_) = e {
                eprintln!("{}", Cli::command().render_usage());
                eprintln!("run `mdsgnn --help` for details");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
