//! `volseg` — command-line front end for the volumetric CT segmentation
//! toolkit. Subcommands cover the full workflow: preprocessing a directory
//! of cases, splitting case lists, training a small demonstration model on
//! synthetic data, scoring predictions, and inspecting/visualising files.

mod discover;
mod evaluate;
mod info;
mod overlay;
mod ppm;
mod preprocess;
mod split;
mod train_demo;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit code for runs where at least one case failed but the invocation
/// itself was fine (partial results are still written).
const EXIT_CASE_FAILURE: u8 = 1;
/// Exit code for an invalid invocation: bad flags, unreadable or invalid
/// configuration, impossible parameter combinations.
const EXIT_USAGE: u8 = 2;

/// Marker for errors caused by the invocation rather than the data. Any
/// error chain containing one of these exits with [`EXIT_USAGE`]; all
/// other errors exit with [`EXIT_CASE_FAILURE`].
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Shorthand for constructing a usage error as an `anyhow::Error`.
pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "volseg",
    version,
    about = "Volumetric CT kidney/tumour segmentation toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample, clip, crop and resize/patch a directory of CT cases
    Preprocess(preprocess::PreprocessArgs),
    /// Deterministically split a case list into train and test sets
    Split(split::SplitArgs),
    /// Score predicted label maps against ground-truth label maps
    Evaluate(evaluate::EvaluateArgs),
    /// Generate synthetic cases, train a small model, and score it
    TrainDemo(train_demo::TrainDemoArgs),
    /// Export one slice as a PPM image with the mask tinted on top
    Overlay(overlay::OverlayArgs),
    /// Print a header and content summary of a NIfTI file
    Info(info::InfoArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(args) => preprocess::run(&args),
        Command::Split(args) => split::run(&args),
        Command::Evaluate(args) => evaluate::run(&args),
        Command::TrainDemo(args) => train_demo::run(&args),
        Command::Overlay(args) => overlay::run(&args),
        Command::Info(args) => info::run(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|e| e.is::<UsageError>()) {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_CASE_FAILURE)
            }
        }
    }
}
