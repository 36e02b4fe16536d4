//! Acceptance gate for the toolkit: eight independent checks, each
//! printing one PASS/FAIL line (visible with `--nocapture`, or in the
//! harness summary since every check is its own test).
//!
//! 1. published-table arithmetic reproduction
//! 2. Dice against a brute-force counting oracle
//! 3. resampling exactness on affine fields + shape formula
//! 4. patch sampler statistics and determinism
//! 5. finite-difference gradient verification of every network primitive
//! 6. end-to-end synthetic training run through the real binary
//! 7. NIfTI round-trip fidelity and header fuzzing
//! 8. the README states plainly what is NOT reproducible here

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use volseg_core::metrics::{aggregate, dice_binary, CaseReport};
use volseg_core::net::gradcheck;
use volseg_core::net::synth::{generate_case, SynthConfig};
use volseg_core::net::train::curve_from_csv;
use volseg_core::net::optim::{PlateauConfig, PlateauScheduler};
use volseg_core::nifti::{
    encode_header, parse_header, read_image_bytes, write_image_bytes, Datatype, HEADER_SIZE,
};
use volseg_core::resample::{
    resample_label_to_spacing, resize_label_to_shape, spacing_output_extent, trilinear_sample,
    SampleMode,
};
use volseg_core::rng::SplitMix64;
use volseg_core::sampler::{choose_centre, sample_patches, PatchSamplerConfig};
use volseg_core::volume::Volume;

fn criterion<F: FnOnce() + UnwindSafe>(number: usize, name: &str, check: F) {
    match catch_unwind(check) {
        Ok(()) => println!("criterion {number} ({name}): PASS"),
        Err(cause) => {
            println!("criterion {number} ({name}): FAIL");
            resume_unwind(cause);
        }
    }
}

// ---------------------------------------------------------------- 1 ----

/// Published per-case test scores of the best model: (case, kidney dice,
/// tumour dice, average dice, time in seconds).
const PUBLISHED_CASES: [(u32, f64, f64, f64, f64); 25] = [
    (36, 0.8038, 0.7103, 0.7571, 24.24),
    (37, 0.4276, 0.6835, 0.5556, 15.79),
    (39, 0.8002, 0.0, 0.4001, 16.10),
    (41, 0.9341, 0.0, 0.4671, 8.91),
    (42, 0.8872, 0.1160, 0.5016, 39.90),
    (43, 0.9152, 0.2427, 0.5790, 26.54),
    (44, 0.9148, 0.8552, 0.8850, 19.59),
    (45, 0.8855, 0.6735, 0.7795, 10.66),
    (46, 0.9131, 0.8909, 0.9020, 24.40),
    (47, 0.7889, 0.7638, 0.7764, 24.32),
    (48, 0.9653, 0.8296, 0.8975, 17.62),
    (50, 0.9662, 0.0, 0.4831, 15.33),
    (51, 0.9543, 0.7102, 0.8323, 11.27),
    (54, 0.7086, 0.1444, 0.4265, 21.27),
    (55, 0.7780, 0.8477, 0.8129, 17.07),
    (56, 0.4346, 0.7855, 0.6101, 15.40),
    (57, 0.8188, 0.7280, 0.7734, 13.43),
    (58, 0.7549, 0.4318, 0.5934, 18.11),
    (60, 0.8374, 0.7843, 0.8109, 22.15),
    (61, 0.2921, 0.2175, 0.2548, 8.03),
    (62, 0.8073, 0.0320, 0.4197, 16.49),
    (64, 0.9532, 0.0117, 0.4825, 9.54),
    (65, 0.9295, 0.3858, 0.6577, 16.01),
    (69, 0.8474, 0.1442, 0.4958, 15.20),
    (70, 0.7679, 0.7944, 0.7812, 10.61),
];

/// Published column means over those 25 cases (kidney, tumour, average).
const PUBLISHED_MEANS: (f64, f64, f64) = (0.8034, 0.4713, 0.6374);

/// Tolerance for values that went through 4-decimal publication rounding.
/// The widest legitimate gap is half an ulp of the fourth decimal; one
/// case sits exactly on it, hence the hair of slack.
const ROUNDING_TOL: f64 = 5e-5 + 1e-12;

#[test]
fn criterion_1_table_arithmetic() {
    criterion(1, "table arithmetic", || {
        let started = Instant::now();
        let reports: Vec<CaseReport> = PUBLISHED_CASES
            .iter()
            .map(|&(case, kidney, tumour, _, time_s)| {
                CaseReport::from_scores(&format!("case_{case:05}"), kidney, tumour, time_s)
            })
            .collect();

        for (report, &(case, _, _, published_avg, _)) in reports.iter().zip(&PUBLISHED_CASES) {
            let dev = (report.average_dice - published_avg).abs();
            assert!(
                dev <= ROUNDING_TOL,
                "case {case}: derived {:.6} vs published {published_avg}",
                report.average_dice
            );
        }
        // The two all-zero-tumour cases called out by name.
        let by_case = |c: u32| {
            reports
                .iter()
                .find(|r| r.case_id == format!("case_{c:05}"))
                .unwrap()
        };
        assert_eq!((by_case(39).average_dice * 1e4).round() / 1e4, 0.4001);
        assert_eq!((by_case(41).average_dice * 1e4).round() / 1e4, 0.4671);

        let agg = aggregate(&reports).unwrap();
        let (kidney, tumour, average) = PUBLISHED_MEANS;
        assert!((agg.mean_kidney - kidney).abs() <= ROUNDING_TOL, "{}", agg.mean_kidney);
        assert!((agg.mean_tumour - tumour).abs() <= ROUNDING_TOL, "{}", agg.mean_tumour);
        assert!((agg.mean_average - average).abs() <= ROUNDING_TOL, "{}", agg.mean_average);

        assert!(started.elapsed() < Duration::from_secs(1));
    });
}

// ---------------------------------------------------------------- 2 ----

fn brute_force_dice(pred: &[bool], truth: &[bool], smooth: f64) -> f64 {
    let mut intersection = 0usize;
    let mut pred_count = 0usize;
    let mut truth_count = 0usize;
    for i in 0..pred.len() {
        if pred[i] && truth[i] {
            intersection += 1;
        }
        if pred[i] {
            pred_count += 1;
        }
        if truth[i] {
            truth_count += 1;
        }
    }
    (2.0 * intersection as f64 + smooth) / ((pred_count + truth_count) as f64 + smooth)
}

#[test]
fn criterion_2_dice_oracle() {
    criterion(2, "dice vs counting oracle", || {
        let mut rng = SplitMix64::new(0xd1ce);
        for trial in 0..200 {
            let nx = 1 + rng.next_index(8);
            let ny = 1 + rng.next_index(8);
            let nz = 1 + rng.next_index(8);
            let n = nx * ny * nz;
            // Vary the density so some pairs are near-empty, some dense.
            let density_a = rng.next_f64();
            let density_b = rng.next_f64();
            let a: Vec<bool> = (0..n).map(|_| rng.next_f64() < density_a).collect();
            let b: Vec<bool> = (0..n).map(|_| rng.next_f64() < density_b).collect();

            let fast = dice_binary(&a, &b, 1.0);
            let slow = brute_force_dice(&a, &b, 1.0);
            assert_eq!(fast, slow, "trial {trial}: {fast} != oracle {slow}");
            assert_eq!(fast, dice_binary(&b, &a, 1.0), "trial {trial}: asymmetric");
            assert!(fast > 0.0, "trial {trial}: smooth=1 must keep dice positive");
        }
    });
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_3_resampling_exactness() {
    criterion(3, "resampling exactness", || {
        // Trilinear interpolation is exact on fields affine in each axis.
        let shape = [9, 7, 5];
        let field = |x: f64, y: f64, z: f64| 3.5 - 1.25 * x + 0.75 * y + 2.0 * z;
        let mut data = vec![0.0; 9 * 7 * 5];
        for z in 0..5 {
            for y in 0..7 {
                for x in 0..9 {
                    data[x + 9 * (y + 7 * z)] = field(x as f64, y as f64, z as f64);
                }
            }
        }
        let volume = Volume::new(shape, [1.0; 3], data).unwrap();

        let mut rng = SplitMix64::new(33);
        for _ in 0..50 {
            let p = [
                rng.next_range(0.0, 8.0),
                rng.next_range(0.0, 6.0),
                rng.next_range(0.0, 4.0),
            ];
            let got = trilinear_sample(&volume, p);
            let want = field(p[0], p[1], p[2]);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "at {p:?}: {got} vs {want}"
            );
        }

        // Shape rule: round(n * s / s'), floored at one voxel.
        assert_eq!(spacing_output_extent(512, 0.81, 1.62), 256);
        assert_eq!(spacing_output_extent(100, 5.0, 3.22), 155);

        // Nearest-neighbour label resampling cannot invent label values.
        let (_, labels) = generate_case(
            &SynthConfig { shape: [14, 12, 10], ..SynthConfig::default() },
            99,
        );
        let spaced =
            resample_label_to_spacing(&labels, [0.9, 2.1, 1.4], SampleMode::Nearest).unwrap();
        let resized = resize_label_to_shape(&labels, [5, 9, 23], SampleMode::Nearest).unwrap();
        for output in [&spaced, &resized] {
            let mut seen: Vec<u8> = output.data.clone();
            seen.sort_unstable();
            seen.dedup();
            assert!(
                seen.iter().all(|v| labels.data.contains(v)),
                "nearest resampling introduced labels {seen:?}"
            );
        }
    });
}

// ---------------------------------------------------------------- 4 ----

#[test]
fn criterion_4_sampler_statistics() {
    criterion(4, "sampler statistics", || {
        let (image, labels) = generate_case(
            &SynthConfig { shape: [20, 20, 10], ..SynthConfig::default() },
            7,
        );

        // Equal stratum weights: half of all centres must land on
        // foreground, regardless of how rare foreground voxels are.
        let config = PatchSamplerConfig {
            patch_size: [8, 8, 4],
            pos: 1.0,
            neg: 1.0,
            ..PatchSamplerConfig::default()
        };
        let mut rng = SplitMix64::new(0x5a5a);
        let draws = 10_000;
        let mut foreground = 0usize;
        for _ in 0..draws {
            let c = choose_centre(&labels, &config, &mut rng).unwrap();
            let idx = c[0] + labels.shape[0] * (c[1] + labels.shape[1] * c[2]);
            if labels.data[idx] > 0 {
                foreground += 1;
            }
        }
        let rate = foreground as f64 / draws as f64;
        assert!((rate - 0.5).abs() <= 0.02, "foreground rate {rate}");

        // Every patch has exactly the configured shape, even when the
        // requested patch dwarfs the volume and must be padded.
        for patch_size in [[128, 128, 32], [7, 9, 5], [4, 4, 2]] {
            let config = PatchSamplerConfig {
                patch_size,
                num_samples: 6,
                seed: 21,
                ..config.clone()
            };
            let patches = sample_patches(&image, &labels, &config).unwrap();
            assert_eq!(patches.len(), 6);
            for p in &patches {
                assert_eq!(p.image.shape, patch_size);
                assert_eq!(p.label.shape, patch_size);
            }
            let oversized = patch_size.iter().zip(&labels.shape).all(|(p, s)| p > s);
            if oversized {
                assert!(patches.iter().all(|p| p.padded));
            }
        }

        // Bit-identical resampling under a fixed seed.
        let config = PatchSamplerConfig {
            patch_size: [6, 6, 4],
            num_samples: 5,
            seed: 99,
            ..config.clone()
        };
        let a = sample_patches(&image, &labels, &config).unwrap();
        let b = sample_patches(&image, &labels, &config).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.centre, pb.centre);
            assert_eq!(pa.label.data, pb.label.data);
            let bits =
                |v: &Volume| v.data.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
            assert_eq!(bits(&pa.image), bits(&pb.image));
        }
    });
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_5_gradient_verification() {
    criterion(5, "gradient verification", || {
        let started = Instant::now();
        let reports = gradcheck::run_all(2024);
        let names: Vec<&str> = reports.iter().map(|r| r.name).collect();
        for expected in [
            "conv3d",
            "prelu",
            "instance_norm",
            "softmax+dice",
            "residual_unit",
            "full_model",
        ] {
            assert!(names.contains(&expected), "missing check {expected}");
        }
        for report in &reports {
            assert!(
                report.passes(),
                "{}: max relative error {:.3e} over {} comparisons",
                report.name,
                report.max_rel_err,
                report.comparisons
            );
        }
        assert!(
            started.elapsed() < Duration::from_secs(120),
            "gradient checks took {:?}",
            started.elapsed()
        );
    });
}

// ---------------------------------------------------------------- 6 ----

#[test]
fn criterion_6_end_to_end_training() {
    criterion(6, "end-to-end synthetic training", || {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("demo");
        let started = Instant::now();
        let output = std::process::Command::new(env!("CARGO_BIN_EXE_volseg"))
            .args([
                "train-demo",
                "--output",
                out_dir.to_str().unwrap(),
                "--train-cases",
                "20",
                "--val-cases",
                "5",
                "--epochs",
                "30",
                "--seed",
                "0",
            ])
            .output()
            .expect("binary runs");
        let elapsed = started.elapsed();
        assert!(
            output.status.success(),
            "train-demo failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");

        // Held-out foreground quality.
        let json: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out_dir.join("aggregate.json")).unwrap(),
        )
        .unwrap();
        let mean_average = json["mean_average"].as_f64().unwrap();
        assert!(mean_average > 0.8, "held-out average dice {mean_average}");
        assert_eq!(json["case_count"].as_u64().unwrap(), 5);

        // Loss decreases on average: strictly falling third-of-run means.
        let curve =
            curve_from_csv(&std::fs::read_to_string(out_dir.join("curves.csv")).unwrap()).unwrap();
        assert_eq!(curve.len(), 30);
        let third = curve.len() / 3;
        let mean = |rows: &[volseg_core::net::train::EpochStats]| {
            rows.iter().map(|r| r.train_loss).sum::<f64>() / rows.len() as f64
        };
        let (first, middle, last) = (
            mean(&curve[..third]),
            mean(&curve[third..2 * third]),
            mean(&curve[2 * third..]),
        );
        assert!(
            first > middle && middle > last,
            "loss thirds not decreasing: {first:.4} {middle:.4} {last:.4}"
        );

        // The recorded lr column must be exactly what a patience-10 /
        // factor-10 plateau schedule driven by the val column produces.
        let mut scheduler = PlateauScheduler::new(curve[0].lr, PlateauConfig::default());
        for (epoch, row) in curve.iter().enumerate() {
            assert_eq!(
                row.lr,
                scheduler.lr(),
                "epoch {}: lr {} deviates from the plateau rule",
                epoch + 1,
                row.lr
            );
            scheduler.observe(row.val_loss);
        }
    });
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_7_nifti_robustness() {
    criterion(7, "nifti robustness", || {
        // Byte-exact round trips for every datatype, plain and gzip.
        let shape = [5, 4, 3];
        let spacing = [1.62, 1.62, 3.22];
        let mut rng = SplitMix64::new(4711);
        for datatype in [
            Datatype::Uint8,
            Datatype::Int16,
            Datatype::Int32,
            Datatype::Float32,
            Datatype::Float64,
        ] {
            // Values exactly representable in the target type.
            let data: Vec<f64> = (0..60)
                .map(|_| match datatype {
                    Datatype::Uint8 => rng.next_index(256) as f64,
                    Datatype::Int16 => rng.next_index(65536) as f64 - 32768.0,
                    Datatype::Int32 => rng.next_index(1 << 20) as f64 - (1 << 19) as f64,
                    Datatype::Float32 => (rng.next_index(4096) as f64 - 2048.0) * 0.25,
                    Datatype::Float64 => rng.next_f64() * 2e3 - 1e3,
                })
                .collect();
            let volume = Volume::new(shape, spacing, data).unwrap();
            for gzip in [false, true] {
                let bytes = write_image_bytes(&volume, datatype, gzip).unwrap();
                let (header, decoded) = read_image_bytes(&bytes).unwrap();
                assert_eq!(header.datatype, datatype);
                assert_eq!(decoded.shape, shape);
                assert_eq!(decoded.data, volume.data, "{datatype:?} gzip={gzip}");
                let again = write_image_bytes(&decoded, datatype, gzip).unwrap();
                assert_eq!(bytes, again, "{datatype:?} gzip={gzip} not byte-stable");
            }
        }

        // Fuzzing: 500 random headers and 500 single-byte corruptions of a
        // valid file must never panic or read out of bounds; failures are
        // typed errors by construction of the return type.
        let mut rng = SplitMix64::new(0xf422);
        let mut random_rejected = 0usize;
        for _ in 0..500 {
            let mut header = [0u8; HEADER_SIZE];
            for b in header.iter_mut() {
                *b = rng.next_index(256) as u8;
            }
            if parse_header(&header).is_err() {
                random_rejected += 1;
            }
        }
        // Random bytes essentially never form a valid header.
        assert_eq!(random_rejected, 500);

        let volume = Volume::new([3, 3, 2], [1.0; 3], (0..18).map(f64::from).collect()).unwrap();
        let valid = write_image_bytes(&volume, Datatype::Float32, false).unwrap();
        let mut outcomes = [0usize; 2];
        for _ in 0..500 {
            let mut mutated = valid.clone();
            let pos = rng.next_index(mutated.len());
            let flip = 1 + rng.next_index(255) as u8;
            mutated[pos] ^= flip;
            match read_image_bytes(&mutated) {
                Ok((h, v)) => {
                    // Still-parsable mutants must stay self-consistent.
                    assert_eq!(v.data.len(), h.voxel_count());
                    outcomes[0] += 1;
                }
                Err(_) => outcomes[1] += 1,
            }
        }
        // Both outcomes occur: many mutations are harmless (e.g. affine
        // bytes), many break the format — and none of them crash.
        assert!(outcomes[0] > 0 && outcomes[1] > 0, "{outcomes:?}");

        // Round-trip the header codec itself on a valid header.
        let (header, _) = read_image_bytes(&valid).unwrap();
        let encoded = encode_header(&header);
        let reparsed = parse_header(&encoded).unwrap();
        assert_eq!(reparsed.shape(), header.shape());
        assert_eq!(reparsed.datatype, header.datatype);
    });
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_8_explicit_non_reproducibility() {
    criterion(8, "explicit non-reproducibility statement", || {
        let readme_path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../..")
            .join("README.md");
        let readme = std::fs::read_to_string(&readme_path)
            .unwrap_or_else(|e| panic!("cannot read {}: {e}", readme_path.display()));
        let lowered = readme.to_lowercase();
        for needle in [
            // The published model scores need the real dataset...
            "not reproducible",
            "300-case",
            // ...and real training hardware; this repo verifies
            // arithmetic and properties instead.
            "gpu",
            "property",
        ] {
            assert!(
                lowered.contains(needle),
                "README must spell out what is not reproducible (missing {needle:?})"
            );
        }
    });
}
