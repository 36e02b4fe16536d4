//! `volseg preprocess` — run the full preprocessing pipeline over a
//! directory of cases and write the results plus a JSON manifest that
//! records, per case, everything needed to replay the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use volseg_core::nifti::{read_image_file, read_label_file, write_image_file, write_label_file, Datatype};
use volseg_core::pipeline::{run_case, CaseRecord, PipelineConfig};
use volseg_core::rng::SplitMix64;

use crate::discover::{self, Case};
use crate::usage;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Directory of input cases (one subdirectory per case)
    #[arg(long)]
    pub input: PathBuf,

    /// Directory for processed cases and the manifest
    #[arg(long)]
    pub output: PathBuf,

    /// JSON pipeline configuration; flags below override file values
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Named preprocessing preset: model1, model2 or model3
    #[arg(long)]
    pub preset: Option<String>,

    /// Master seed (per-case seeds are derived from it)
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads for per-case fan-out
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Image file name inside each case directory
    #[arg(long, default_value = "imaging.nii.gz")]
    pub image_name: String,

    /// Label file name inside each case directory
    #[arg(long, default_value = "segmentation.nii.gz")]
    pub label_name: String,
}

/// Per-case manifest entry: either a record of what was produced or the
/// error that stopped the case. `seed` is always present so a failed case
/// can be re-run in isolation.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestCase {
    pub id: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<CaseRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    cases: &'a [ManifestCase],
}

/// Merge config file and command-line overrides into the final pipeline
/// configuration. Everything that can be wrong here is the caller's
/// invocation, so failures are usage errors.
pub fn load_config(
    config_path: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<PipelineConfig> {
    let mut config = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<PipelineConfig>(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(name) = preset {
        config.preset = Some(name.parse().map_err(|e| usage(format!("{e}")))?);
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let config = config.resolved();

    let [lo, hi] = config.clip_range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(usage(format!("clip range {lo}..{hi} is not a valid interval")));
    }
    if let Some(patch) = &config.patch {
        if patch.patch_size.contains(&0) || patch.num_samples == 0 {
            return Err(usage("patch size and sample count must be nonzero".to_string()));
        }
    }
    Ok(config)
}

/// Read, process and write one case; returns the manifest record and the
/// output paths relative to the output root.
fn process_case(
    case: &Case,
    config: &PipelineConfig,
    seed: u64,
    out_root: &Path,
) -> Result<(CaseRecord, Vec<String>)> {
    let label_path = case
        .label
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("label file missing"))?;
    let (_, image) = read_image_file(&case.image)
        .with_context(|| format!("cannot read {}", case.image.display()))?;
    let (_, label) = read_label_file(label_path)
        .with_context(|| format!("cannot read {}", label_path.display()))?;

    let output = run_case(&image, &label, config, seed)?;

    let case_dir = out_root.join(&case.id);
    std::fs::create_dir_all(&case_dir)
        .with_context(|| format!("cannot create {}", case_dir.display()))?;
    let mut outputs = Vec::new();
    let single = output.pairs.len() == 1;
    for (i, (img, lbl)) in output.pairs.iter().enumerate() {
        let (img_name, lbl_name) = if single {
            ("imaging.nii.gz".to_string(), "segmentation.nii.gz".to_string())
        } else {
            (
                format!("imaging_{i:03}.nii.gz"),
                format!("segmentation_{i:03}.nii.gz"),
            )
        };
        write_image_file(&case_dir.join(&img_name), img, Datatype::Float32, true)?;
        write_label_file(&case_dir.join(&lbl_name), lbl, Datatype::Uint8, true)?;
        outputs.push(format!("{}/{img_name}", case.id));
        outputs.push(format!("{}/{lbl_name}", case.id));
    }
    Ok((output.record, outputs))
}

/// Process every case under `input`, fanning out to `jobs` workers. The
/// returned entries are in case-id order regardless of scheduling, and
/// per-case seeds depend only on the master seed and that order.
pub fn preprocess_tree(
    input: &Path,
    out_root: &Path,
    config: &PipelineConfig,
    image_name: &str,
    label_name: &str,
    jobs: usize,
) -> Result<Vec<ManifestCase>> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1".to_string()));
    }
    let cases = discover::case_dirs(input, image_name, label_name)?;
    if cases.is_empty() {
        return Err(usage(format!("no cases found under {}", input.display())));
    }
    let seeds: Vec<u64> = (0..cases.len())
        .map(|i| SplitMix64::derive_seed(config.seed, i as u64))
        .collect();

    std::fs::create_dir_all(out_root)
        .with_context(|| format!("cannot create {}", out_root.display()))?;

    let next = AtomicUsize::new(0);
    let mut indexed: Vec<(usize, ManifestCase)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs.min(cases.len()))
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= cases.len() {
                            break;
                        }
                        let case = &cases[i];
                        let entry = match process_case(case, config, seeds[i], out_root) {
                            Ok((record, outputs)) => ManifestCase {
                                id: case.id.clone(),
                                seed: seeds[i],
                                record: Some(record),
                                outputs,
                                error: None,
                            },
                            Err(err) => ManifestCase {
                                id: case.id.clone(),
                                seed: seeds[i],
                                record: None,
                                outputs: Vec::new(),
                                error: Some(format!("{err:#}")),
                            },
                        };
                        local.push((i, entry));
                    }
                    local
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("preprocess worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, entry)| entry).collect())
}

fn write_manifest(path: &Path, config: &PipelineConfig, cases: &[ManifestCase]) -> Result<()> {
    let manifest = Manifest {
        tool: "volseg",
        version: env!("CARGO_PKG_VERSION"),
        config,
        cases,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn run(args: &PreprocessArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref(), args.preset.as_deref(), args.seed)?;
    let cases = preprocess_tree(
        &args.input,
        &args.output,
        &config,
        &args.image_name,
        &args.label_name,
        args.jobs,
    )?;
    write_manifest(&args.output.join(MANIFEST_NAME), &config, &cases)?;

    let failed: Vec<&ManifestCase> = cases.iter().filter(|c| c.error.is_some()).collect();
    for case in &failed {
        eprintln!(
            "error: case {}: {}",
            case.id,
            case.error.as_deref().unwrap_or("unknown")
        );
    }
    println!(
        "preprocessed {}/{} cases -> {}",
        cases.len() - failed.len(),
        cases.len(),
        args.output.display()
    );
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(crate::EXIT_CASE_FAILURE))
    }
}
