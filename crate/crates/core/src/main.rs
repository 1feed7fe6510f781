use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rashcam::config::PipelineConfig;
use rashcam::pipeline::{run_pipeline, RunPaths};

#[derive(Parser)]
#[command(name = "rashcam", version, about = "Rash-driving analysis of dashcam frame sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a directory of numbered PGM/PPM frames.
    Analyze {
        #[arg(long, value_name = "DIR")]
        frames: PathBuf,
        #[arg(long, value_name = "FILE")]
        calib: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// External detections, one JSON record per line.
        #[arg(long, value_name = "FILE")]
        detections: Option<PathBuf>,
        /// Events output (JSONL).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        overlay_dir: Option<PathBuf>,
        /// Overrides `seed` from the config file.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let Command::Analyze {
        frames,
        calib,
        config,
        detections,
        out,
        overlay_dir,
        seed,
    } = Cli::parse().command;

    let mut cfg = match PipelineConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let paths = RunPaths {
        frames_dir: frames,
        calib,
        detections,
        out,
        overlay_dir,
    };
    let summary = match run_pipeline(&cfg, &paths) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    if summary.errors > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
