//! `volseg split` — deterministic train/test partition of a case list:
//! seeded shuffle, then a rounded cut at the train fraction.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use thiserror::Error;
use volseg_core::rng::SplitMix64;

use crate::discover;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("empty case list")]
    EmptyCaseList,
    #[error("train and test fractions must sum to 1, got {train} + {test}")]
    BadFractions { train: f64, test: f64 },
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Directory of cases (one subdirectory per case)
    #[arg(long, conflicts_with = "cases")]
    pub input: Option<PathBuf>,

    /// Text file listing one case id per line
    #[arg(long)]
    pub cases: Option<PathBuf>,

    /// Directory for train.txt and test.txt
    #[arg(long)]
    pub output: PathBuf,

    /// Fraction of cases assigned to training
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,

    /// Fraction of cases assigned to testing
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,

    /// Shuffle seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Shuffle and cut. The number of training cases is `round(frac * n)`,
/// so 125 cases at 0.8 give the expected 100/25.
pub fn split_cases(
    ids: &[String],
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), SplitError> {
    if ids.is_empty() {
        return Err(SplitError::EmptyCaseList);
    }
    let in_range = |f: f64| (0.0..=1.0).contains(&f);
    if (train_frac + test_frac - 1.0).abs() > 1e-9 || !in_range(train_frac) || !in_range(test_frac)
    {
        return Err(SplitError::BadFractions {
            train: train_frac,
            test: test_frac,
        });
    }
    let mut shuffled = ids.to_vec();
    SplitMix64::new(seed).shuffle(&mut shuffled);
    let train_count = ((train_frac * ids.len() as f64).round() as usize).min(ids.len());
    let test = shuffled.split_off(train_count);
    Ok((shuffled, test))
}

fn load_ids(args: &SplitArgs) -> Result<Vec<String>> {
    match (&args.input, &args.cases) {
        (Some(dir), None) => {
            let cases = discover::case_dirs(dir, "imaging.nii.gz", "segmentation.nii.gz")?;
            Ok(cases.into_iter().map(|c| c.id).collect())
        }
        (None, Some(file)) => {
            let text = std::fs::read_to_string(file)
                .with_context(|| format!("cannot read case list {}", file.display()))?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect())
        }
        _ => Err(crate::usage("exactly one of --input or --cases is required")),
    }
}

pub fn run(args: &SplitArgs) -> Result<ExitCode> {
    let ids = load_ids(args)?;
    let (train, test) = split_cases(&ids, args.train_frac, args.test_frac, args.seed)
        .map_err(|e| crate::usage(e.to_string()))?;

    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;
    for (name, list) in [("train.txt", &train), ("test.txt", &test)] {
        let path = args.output.join(name);
        let mut text = list.join("\n");
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!(
        "split {} cases -> {} train / {} test (seed {})",
        ids.len(),
        train.len(),
        test.len(),
        args.seed
    );
    Ok(ExitCode::SUCCESS)
}
