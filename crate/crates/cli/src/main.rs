//! `bgrl`: synthetic data, preprocessing, training and evaluation stages.
//!
//! Every stage reads and writes artifacts in a work directory (`--dir`,
//! default `out_dir` from the config or `.`). Exit codes: 0 on success, 1 for
//! contract or config errors, 2 for I/O errors and missing artifacts.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "bgrl",
    version,
    about = "Radiogenomic bipartite graph learning"
)]
pub struct Cli {
    /// `key = value` run configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` (and `synth_seed` for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Work directory for inputs and outputs.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,

    /// Overrides a config key, e.g. `--set epochs_gnn=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic gene CSV, image feature CSV and truth manifest.
    Synth(SynthArgs),
    /// Keep the highest-entropy slices of each volume.
    Preprocess(StageArgs),
    /// Train the denoising autoencoder on preprocessed volumes.
    TrainAe(StageArgs),
    /// Encode volumes into the image feature CSV.
    Extract(StageArgs),
    /// Split, normalize and train one BGNN; writes checkpoint and split.
    TrainGnn(GnnArgs),
    /// Score the trained BGNN on its test split; writes the JSON report.
    Eval,
    /// Run the learned/unit × gene-subset grid.
    Ablate(AblateArgs),
    /// Print the averaged edge weights of a report.
    ReportWeights(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    /// Comma-separated genes carrying the signal.
    #[arg(long)]
    carriers: Option<String>,
    /// Also write phantom RVT volumes for every subject into `volumes/`.
    #[arg(long)]
    volumes: bool,
    /// Side length of the phantom volumes.
    #[arg(long, default_value_t = 32)]
    size: usize,
}

#[derive(Args, Debug)]
pub struct StageArgs {
    /// Volume directory (`*.rvt` plus `labels.csv`).
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GnnArgs {
    /// `learned` or `unit`.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated gene subset.
    #[arg(long)]
    genes: Option<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    seeds: Option<String>,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report JSON; defaults to `report.json` in the work directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|c| {
        c.downcast_ref::<bgrl::Error>()
            .is_some_and(bgrl::Error::is_io)
            || c.downcast_ref::<std::io::Error>().is_some()
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
