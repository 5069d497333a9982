//! `autolabel3d`: generate synthetic data, train the pose network, fit,
//! predict, track, evaluate and export.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "autolabel3d", version, about = "Self-supervised 3D box auto-labelling")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set epochs=1` or
    /// `--set train.loss.consistency=false`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for both data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network on a synthetic dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Use these tracks (JSON lines) instead of running the tracker.
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Fit every instance directly, without learning.
    FitDirect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write KITTI label files for a synthetic dataset or a KITTI-layout
    /// directory (velodyne/, calib/, masks/).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Associate detections across frames and write tracks as JSON lines.
    Track {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted labels with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bird's-eye-view SVG of one frame: ground truth red, predictions green.
    ExportSvg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        frame: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Synth { out } => {
            cfg.paths.output = Some(out.clone());
            commands::synth(&cfg, &out)
        }
        Command::Train {
            dataset,
            out,
            resume,
            tracks,
        } => {
            cfg.paths.dataset = Some(dataset.clone());
            cfg.paths.output = Some(out.clone());
            cfg.paths.resume = resume.clone();
            cfg.paths.tracks = tracks.clone();
            commands::train(&cfg, &dataset, &out, resume.as_deref(), tracks.as_deref())
        }
        Command::FitDirect { dataset, out } => {
            cfg.paths.dataset = Some(dataset.clone());
            cfg.paths.output = Some(out.clone());
            commands::fit_direct(&cfg, &dataset, &out)
        }
        Command::Predict {
            checkpoint,
            input,
            out,
        } => {
            cfg.paths.checkpoint = Some(checkpoint.clone());
            cfg.paths.input = Some(input.clone());
            cfg.paths.output = Some(out.clone());
            commands::predict(&cfg, &checkpoint, &input, &out)
        }
        Command::Track { input, out } => {
            cfg.paths.input = Some(input.clone());
            cfg.paths.output = Some(out.clone());
            commands::track(&cfg, &input, &out)
        }
        Command::Eval { pred, gt, out } => {
            cfg.paths.predictions = Some(pred.clone());
            cfg.paths.ground_truth = Some(gt.clone());
            cfg.paths.output = Some(out.clone());
            commands::eval(&cfg, &pred, &gt, &out)
        }
        Command::ExportSvg {
            pred,
            gt,
            frame,
            out,
        } => {
            cfg.paths.predictions = Some(pred.clone());
            cfg.paths.ground_truth = Some(gt.clone());
            cfg.paths.output = Some(out.clone());
            commands::export_svg(&cfg, &pred, &gt, frame, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
