//! Dice overlap scoring and per-case / aggregate reports.
//!
//! The score for one class is the smoothed Dice coefficient
//!
//! ```text
//! (2 |A ∩ B| + smooth) / (|A| + |B| + smooth)
//! ```
//!
//! with `smooth = 1` by default, so two empty masks score a perfect 1
//! instead of dividing by zero, and a false-positive speck against an
//! empty truth is punished smoothly rather than collapsing to 0/0.
//!
//! Reports carry full-precision values internally; rounding to four
//! decimal places happens only when a report is serialized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::LabelVolume;

/// Kidney voxels (class 1 in the label alphabet).
pub const CLASS_KIDNEY: u8 = 1;
/// Tumour voxels (class 2).
pub const CLASS_TUMOUR: u8 = 2;

/// Exact column order of the per-case CSV report.
pub const CASE_CSV_HEADER: &str = "case_id,kidney_dice,tumour_dice,average_dice,time_s";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction shape {pred:?} does not match truth shape {truth:?}")]
    ShapeMismatch { pred: [usize; 3], truth: [usize; 3] },
    #[error("smooth term must be finite and > 0, got {0}")]
    InvalidSmooth(f64),
    #[error("cannot aggregate an empty report list")]
    EmptyReportList,
    #[error("case id {0:?} cannot be written to CSV (empty or contains a comma)")]
    InvalidCaseId(String),
    #[error("malformed report CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceConfig {
    pub smooth: f64,
}

impl Default for DiceConfig {
    fn default() -> Self {
        Self { smooth: 1.0 }
    }
}

impl DiceConfig {
    fn validate(&self) -> Result<(), MetricsError> {
        if !self.smooth.is_finite() || self.smooth <= 0.0 {
            return Err(MetricsError::InvalidSmooth(self.smooth));
        }
        Ok(())
    }
}

/// Scores for one evaluated case. `average_dice` is the unweighted mean
/// of the two organ scores; background is not scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub kidney_dice: f64,
    pub tumour_dice: f64,
    pub average_dice: f64,
    pub time_s: f64,
}

impl CaseReport {
    /// Build a report from per-organ scores, deriving the average column.
    pub fn from_scores(case_id: &str, kidney: f64, tumour: f64, time_s: f64) -> Self {
        CaseReport {
            case_id: case_id.to_string(),
            kidney_dice: kidney,
            tumour_dice: tumour,
            average_dice: 0.5 * (kidney + tumour),
            time_s,
        }
    }
}

/// Column means over a set of case reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean_kidney: f64,
    pub mean_tumour: f64,
    pub mean_average: f64,
    pub case_count: usize,
}

/// Smoothed Dice between two boolean masks of equal length.
pub fn dice_binary(pred: &[bool], truth: &[bool], smooth: f64) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let mut intersection = 0usize;
    let mut pred_count = 0usize;
    let mut truth_count = 0usize;
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if p {
            pred_count += 1;
        }
        if t {
            truth_count += 1;
        }
        if p && t {
            intersection += 1;
        }
    }
    (2.0 * intersection as f64 + smooth) / ((pred_count + truth_count) as f64 + smooth)
}

/// Dice for one class id between two label volumes.
pub fn dice_for_class(
    pred: &LabelVolume,
    truth: &LabelVolume,
    class: u8,
    config: &DiceConfig,
) -> Result<f64, MetricsError> {
    config.validate()?;
    if pred.shape != truth.shape {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.shape,
            truth: truth.shape,
        });
    }
    let mut intersection = 0usize;
    let mut pred_count = 0usize;
    let mut truth_count = 0usize;
    for (&p, &t) in pred.data.iter().zip(truth.data.iter()) {
        let pm = p == class;
        let tm = t == class;
        if pm {
            pred_count += 1;
        }
        if tm {
            truth_count += 1;
        }
        if pm && tm {
            intersection += 1;
        }
    }
    Ok((2.0 * intersection as f64 + config.smooth)
        / ((pred_count + truth_count) as f64 + config.smooth))
}

/// Score one case: kidney and tumour Dice plus their mean. `time_s` is
/// whatever wall-clock measurement the caller wants recorded.
pub fn dice_case(
    case_id: &str,
    pred: &LabelVolume,
    truth: &LabelVolume,
    config: &DiceConfig,
    time_s: f64,
) -> Result<CaseReport, MetricsError> {
    let kidney = dice_for_class(pred, truth, CLASS_KIDNEY, config)?;
    let tumour = dice_for_class(pred, truth, CLASS_TUMOUR, config)?;
    Ok(CaseReport::from_scores(case_id, kidney, tumour, time_s))
}

/// Column means across cases.
pub fn aggregate(reports: &[CaseReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyReportList);
    }
    let n = reports.len() as f64;
    Ok(AggregateReport {
        mean_kidney: reports.iter().map(|r| r.kidney_dice).sum::<f64>() / n,
        mean_tumour: reports.iter().map(|r| r.tumour_dice).sum::<f64>() / n,
        mean_average: reports.iter().map(|r| r.average_dice).sum::<f64>() / n,
        case_count: reports.len(),
    })
}

fn round4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

/// Render case reports as CSV with the fixed header and four decimal
/// places per numeric column.
pub fn case_reports_to_csv(reports: &[CaseReport]) -> Result<String, MetricsError> {
    let mut out = String::from(CASE_CSV_HEADER);
    out.push('\n');
    for r in reports {
        if r.case_id.is_empty() || r.case_id.contains(',') || r.case_id.contains('\n') {
            return Err(MetricsError::InvalidCaseId(r.case_id.clone()));
        }
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4}\n",
            r.case_id, r.kidney_dice, r.tumour_dice, r.average_dice, r.time_s
        ));
    }
    Ok(out)
}

/// Parse a CSV produced by [`case_reports_to_csv`].
pub fn case_reports_from_csv(text: &str) -> Result<Vec<CaseReport>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CASE_CSV_HEADER => {}
        Some((_, h)) => {
            return Err(MetricsError::MalformedCsv {
                line: 1,
                reason: format!("unexpected header {h:?}"),
            })
        }
        None => {
            return Err(MetricsError::MalformedCsv {
                line: 1,
                reason: "empty input".into(),
            })
        }
    }
    let mut reports = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(MetricsError::MalformedCsv {
                line: i + 1,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| {
            s.trim().parse::<f64>().map_err(|e| MetricsError::MalformedCsv {
                line: i + 1,
                reason: format!("bad {what} {s:?}: {e}"),
            })
        };
        reports.push(CaseReport {
            case_id: fields[0].to_string(),
            kidney_dice: num(fields[1], "kidney_dice")?,
            tumour_dice: num(fields[2], "tumour_dice")?,
            average_dice: num(fields[3], "average_dice")?,
            time_s: num(fields[4], "time_s")?,
        });
    }
    Ok(reports)
}

/// Render the aggregate as JSON with means rounded to four decimals.
pub fn aggregate_to_json(agg: &AggregateReport) -> String {
    let rounded = AggregateReport {
        mean_kidney: round4(agg.mean_kidney),
        mean_tumour: round4(agg.mean_tumour),
        mean_average: round4(agg.mean_average),
        case_count: agg.case_count,
    };
    serde_json::to_string_pretty(&rounded).expect("aggregate report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn label_from(data: Vec<u8>, shape: [usize; 3]) -> LabelVolume {
        LabelVolume::new(shape, [1.0; 3], data).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let masks = vec![true, false, true, true, false];
        assert_eq!(dice_binary(&masks, &masks, 1.0), 1.0);
    }

    #[test]
    fn both_empty_scores_one() {
        let empty = vec![false; 64];
        assert_eq!(dice_binary(&empty, &empty, 1.0), 1.0);
    }

    #[test]
    fn empty_prediction_against_small_truth() {
        let pred = vec![false; 10];
        let truth = vec![true; 10];
        // (0 + 1) / (0 + 10 + 1)
        assert_eq!(dice_binary(&pred, &truth, 1.0), 1.0 / 11.0);
    }

    #[test]
    fn empty_prediction_against_large_truth() {
        let pred = vec![false; 10_000];
        let truth = vec![true; 10_000];
        assert_eq!(dice_binary(&pred, &truth, 1.0), 1.0 / 10_001.0);
    }

    #[test]
    fn disjoint_singletons() {
        let pred = vec![true, false];
        let truth = vec![false, true];
        assert_eq!(dice_binary(&pred, &truth, 1.0), 1.0 / 3.0);
    }

    #[test]
    fn dice_is_symmetric_and_bounded() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..50 {
            let a: Vec<bool> = (0..200).map(|_| rng.next_f64() < 0.3).collect();
            let b: Vec<bool> = (0..200).map(|_| rng.next_f64() < 0.3).collect();
            let ab = dice_binary(&a, &b, 1.0);
            let ba = dice_binary(&b, &a, 1.0);
            assert_eq!(ab, ba);
            assert!(ab > 0.0 && ab <= 1.0);
        }
    }

    /// 200 random mask pairs against a from-scratch recount.
    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = SplitMix64::new(0xD1CE);
        for round in 0..200 {
            let n = 50 + rng.next_index(200);
            let a: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
            let b: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();

            let mut inter = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for i in 0..n {
                if a[i] && b[i] {
                    inter += 1.0;
                }
                if a[i] {
                    na += 1.0;
                }
                if b[i] {
                    nb += 1.0;
                }
            }
            let expected = (2.0 * inter + 1.0) / (na + nb + 1.0);
            assert_eq!(dice_binary(&a, &b, 1.0), expected, "round {round}");
        }
    }

    #[test]
    fn per_class_scoring_ignores_other_classes() {
        // pred marks kidney where truth has tumour; kidney dice must not
        // see the tumour voxels as matches
        let pred = label_from(vec![1, 1, 0, 0, 2, 0, 0, 0], [2, 2, 2]);
        let truth = label_from(vec![1, 2, 0, 0, 2, 0, 0, 0], [2, 2, 2]);
        let cfg = DiceConfig::default();
        let kidney = dice_for_class(&pred, &truth, CLASS_KIDNEY, &cfg).unwrap();
        let tumour = dice_for_class(&pred, &truth, CLASS_TUMOUR, &cfg).unwrap();
        // kidney: |A|=2, |B|=1, inter=1 -> 3/4
        assert_eq!(kidney, 3.0 / 4.0);
        // tumour: |A|=1, |B|=2, inter=1 -> 3/4
        assert_eq!(tumour, 3.0 / 4.0);
    }

    #[test]
    fn case_report_averages_the_two_classes() {
        let pred = label_from(vec![1, 0, 0, 0, 0, 0, 0, 0], [2, 2, 2]);
        let truth = label_from(vec![1, 0, 0, 0, 0, 0, 2, 0], [2, 2, 2]);
        let r = dice_case("case_00000", &pred, &truth, &DiceConfig::default(), 0.5).unwrap();
        assert_eq!(r.kidney_dice, 1.0);
        assert_eq!(r.tumour_dice, 1.0 / 2.0); // (0+1)/(0+1+1)
        assert_eq!(r.average_dice, 0.75);
        assert_eq!(r.time_s, 0.5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = LabelVolume::zeros([2, 2, 2], [1.0; 3]);
        let b = LabelVolume::zeros([2, 2, 3], [1.0; 3]);
        assert!(matches!(
            dice_for_class(&a, &b, 1, &DiceConfig::default()),
            Err(MetricsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_positive_smooth_is_rejected() {
        let a = LabelVolume::zeros([2, 2, 2], [1.0; 3]);
        assert_eq!(
            dice_for_class(&a, &a, 1, &DiceConfig { smooth: 0.0 }),
            Err(MetricsError::InvalidSmooth(0.0))
        );
    }

    fn sample_reports() -> Vec<CaseReport> {
        vec![
            CaseReport {
                case_id: "case_00003".into(),
                kidney_dice: 0.9559,
                tumour_dice: 0.8013,
                average_dice: 0.8786,
                time_s: 12.25,
            },
            CaseReport {
                case_id: "case_00015".into(),
                kidney_dice: 0.9020,
                tumour_dice: 0.0,
                average_dice: 0.4510,
                time_s: 9.5,
            },
            CaseReport {
                case_id: "case_00027".into(),
                kidney_dice: 0.8437,
                tumour_dice: 0.6695,
                average_dice: 0.7566,
                time_s: 15.0,
            },
        ]
    }

    #[test]
    fn aggregate_takes_column_means() {
        let reports = sample_reports();
        let agg = aggregate(&reports).unwrap();
        assert!((agg.mean_kidney - (0.9559 + 0.9020 + 0.8437) / 3.0).abs() < 1e-12);
        assert!((agg.mean_tumour - (0.8013 + 0.0 + 0.6695) / 3.0).abs() < 1e-12);
        assert!((agg.mean_average - (0.8786 + 0.4510 + 0.7566) / 3.0).abs() < 1e-12);
        assert_eq!(agg.case_count, 3);
    }

    #[test]
    fn aggregate_of_nothing_is_an_error() {
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyReportList));
    }

    #[test]
    fn csv_header_is_exact_and_values_are_4dp() {
        let csv = case_reports_to_csv(&sample_reports()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CASE_CSV_HEADER);
        let first = lines.next().unwrap();
        assert_eq!(first, "case_00003,0.9559,0.8013,0.8786,12.2500");
    }

    #[test]
    fn csv_round_trips_within_rounding() {
        let reports = sample_reports();
        let csv = case_reports_to_csv(&reports).unwrap();
        let back = case_reports_from_csv(&csv).unwrap();
        assert_eq!(back.len(), reports.len());
        for (b, r) in back.iter().zip(&reports) {
            assert_eq!(b.case_id, r.case_id);
            assert!((b.kidney_dice - r.kidney_dice).abs() <= 5e-5 + 1e-12);
            assert!((b.tumour_dice - r.tumour_dice).abs() <= 5e-5 + 1e-12);
            assert!((b.average_dice - r.average_dice).abs() <= 5e-5 + 1e-12);
        }
    }

    #[test]
    fn csv_rejects_commas_in_case_ids() {
        let mut reports = sample_reports();
        reports[0].case_id = "bad,id".into();
        assert!(matches!(
            case_reports_to_csv(&reports),
            Err(MetricsError::InvalidCaseId(_))
        ));
    }

    #[test]
    fn csv_parse_rejects_wrong_header() {
        let bad = "case,kidney\ncase_0,0.5\n";
        assert!(matches!(
            case_reports_from_csv(bad),
            Err(MetricsError::MalformedCsv { line: 1, .. })
        ));
    }

    #[test]
    fn aggregate_json_has_exact_keys_and_rounding() {
        let agg = AggregateReport {
            mean_kidney: 0.80343604,
            mean_tumour: 0.47132,
            mean_average: 0.63737802,
            case_count: 25,
        };
        let json = aggregate_to_json(&agg);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["case_count", "mean_average", "mean_kidney", "mean_tumour"]
        );
        assert_eq!(obj["mean_kidney"].as_f64().unwrap(), 0.8034);
        assert_eq!(obj["mean_tumour"].as_f64().unwrap(), 0.4713);
        assert_eq!(obj["mean_average"].as_f64().unwrap(), 0.6374);
        assert_eq!(obj["case_count"].as_u64().unwrap(), 25);
    }
}
