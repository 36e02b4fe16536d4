//! `volseg evaluate` — score predicted label maps against ground truth,
//! case by case. Writes `report.csv` (one row per case, four decimal
//! places) and `aggregate.json` (column means over the CSV rows, plus any
//! per-case failures). The JSON is derived by re-parsing the CSV we just
//! wrote, so the two artifacts can never drift apart.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use volseg_core::metrics::{
    aggregate, aggregate_to_json, case_reports_from_csv, case_reports_to_csv, dice_case,
    AggregateReport, CaseReport, DiceConfig,
};
use volseg_core::nifti::read_label_file;

use crate::discover;

pub const REPORT_CSV: &str = "report.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of predicted label maps
    #[arg(long)]
    pub pred: PathBuf,

    /// Directory of ground-truth label maps
    #[arg(long)]
    pub truth: PathBuf,

    /// Directory for report.csv and aggregate.json
    #[arg(long)]
    pub output: PathBuf,

    /// Label file name inside per-case directories
    #[arg(long, default_value = "segmentation.nii.gz")]
    pub label_name: String,
}

/// A case that could not be scored, kept in the report so a failed run
/// still documents exactly what is missing or broken.
#[derive(Debug, Clone, Serialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub reports: Vec<CaseReport>,
    pub aggregate: Option<AggregateReport>,
    pub failures: Vec<CaseFailure>,
}

fn score_case(id: &str, pred_path: &Path, truth_path: &Path) -> Result<CaseReport> {
    let started = Instant::now();
    let (_, pred) = read_label_file(pred_path)
        .with_context(|| format!("cannot read prediction {}", pred_path.display()))?;
    let (_, truth) = read_label_file(truth_path)
        .with_context(|| format!("cannot read truth {}", truth_path.display()))?;
    let mut report = dice_case(id, &pred, &truth, &DiceConfig::default(), 0.0)?;
    report.time_s = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Score every case id present in either directory and write both report
/// artifacts into `out_dir`. Shared by `evaluate` and `train-demo`.
pub fn evaluate_dirs(
    pred_dir: &Path,
    truth_dir: &Path,
    out_dir: &Path,
    label_name: &str,
) -> Result<EvalOutcome> {
    let preds = discover::label_files(pred_dir, label_name)?;
    let truths = discover::label_files(truth_dir, label_name)?;

    let mut ids: Vec<&String> = preds.keys().chain(truths.keys()).collect();
    ids.sort();
    ids.dedup();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for id in ids {
        match (preds.get(id), truths.get(id)) {
            (Some(p), Some(t)) => match score_case(id, p, t) {
                Ok(report) => reports.push(report),
                Err(err) => failures.push(CaseFailure {
                    case_id: id.clone(),
                    error: format!("{err:#}"),
                }),
            },
            (None, Some(_)) => failures.push(CaseFailure {
                case_id: id.clone(),
                error: "prediction missing".into(),
            }),
            (Some(_), None) => failures.push(CaseFailure {
                case_id: id.clone(),
                error: "ground truth missing".into(),
            }),
            (None, None) => unreachable!("id came from one of the maps"),
        }
    }

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let csv = case_reports_to_csv(&reports)?;
    let csv_path = out_dir.join(REPORT_CSV);
    std::fs::write(&csv_path, &csv)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;

    // Aggregate what the CSV actually says, not the in-memory scores: the
    // rows were rounded on the way out, and the JSON must match the file.
    let agg = match case_reports_from_csv(&csv) {
        Ok(rows) if !rows.is_empty() => Some(aggregate(&rows)?),
        _ => None,
    };
    let json_path = out_dir.join(AGGREGATE_JSON);
    let json = render_aggregate_json(agg.as_ref(), &failures)?;
    std::fs::write(&json_path, json)
        .with_context(|| format!("cannot write {}", json_path.display()))?;

    Ok(EvalOutcome {
        reports,
        aggregate: agg,
        failures,
    })
}

fn render_aggregate_json(agg: Option<&AggregateReport>, failures: &[CaseFailure]) -> Result<String> {
    let mut value: serde_json::Value = match agg {
        Some(agg) => serde_json::from_str(&aggregate_to_json(agg))?,
        None => serde_json::json!({ "case_count": 0 }),
    };
    if !failures.is_empty() {
        value["failures"] = serde_json::to_value(failures)?;
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn run(args: &EvaluateArgs) -> Result<ExitCode> {
    let outcome = evaluate_dirs(&args.pred, &args.truth, &args.output, &args.label_name)?;
    for failure in &outcome.failures {
        eprintln!("error: case {}: {}", failure.case_id, failure.error);
    }
    if let Some(agg) = &outcome.aggregate {
        println!(
            "scored {} cases: kidney {:.4}, tumour {:.4}, average {:.4}",
            agg.case_count, agg.mean_kidney, agg.mean_tumour, agg.mean_average
        );
    }
    if outcome.failures.is_empty() && !outcome.reports.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else if outcome.reports.is_empty() && outcome.failures.is_empty() {
        Err(crate::usage(format!(
            "no label maps found under {} or {}",
            args.pred.display(),
            args.truth.display()
        )))
    } else {
        Ok(ExitCode::from(crate::EXIT_CASE_FAILURE))
    }
}
