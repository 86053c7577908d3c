use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Wavelet autoencoder anomaly detector with a Q-learning calibrated boundary.
#[derive(Debug, Parser)]
#[command(name = "wavecal", version, about)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: paths.output from the config, else ./out].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "SEED")]
    seed_data: Option<u64>,
    #[arg(long, global = true, value_name = "SEED")]
    seed_train: Option<u64>,
    #[arg(long, global = true, value_name = "SEED")]
    seed_rl: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write the synthetic benchmark: series.csv and labels.json.
    Generate,
    /// Train the autoencoder: checkpoint.json and train_log.jsonl.
    Train,
    /// Calibrate the boundary: boundary.json, calibration_log.jsonl, reward_curve.csv.
    Calibrate,
    /// Flag every window: detections.csv.
    Detect,
    /// Score the held-out split: report.json, latent.csv, error_hist.csv.
    Evaluate,
    /// Every stage in one process.
    Run,
}

/// 2 for configuration errors, 4 for numerical failures, 3 for anything
/// else (missing files, malformed data).
fn exit_code(e: &wavecal::Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numerical() {
        4
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::Context::new(&cli).and_then(|ctx| match cli.command {
        Command::Generate => ctx.generate(),
        Command::Train => ctx.train(),
        Command::Calibrate => ctx.calibrate(),
        Command::Detect => ctx.detect(),
        Command::Evaluate => ctx.evaluate(),
        Command::Run => ctx.run(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
