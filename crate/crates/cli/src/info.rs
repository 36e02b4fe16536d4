//! `volseg info` — print a quick summary of a NIfTI file: geometry,
//! datatype, value range, and a class histogram when the contents look
//! like a label map.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use volseg_core::nifti::{read_image_file, Datatype};
use volseg_core::volume::CLASS_COUNT;

#[derive(Args, Debug)]
pub struct InfoArgs {
    /// NIfTI file to inspect (.nii or .nii.gz)
    pub path: PathBuf,
}

fn datatype_name(dt: Datatype) -> &'static str {
    match dt {
        Datatype::Uint8 => "uint8",
        Datatype::Int16 => "int16",
        Datatype::Int32 => "int32",
        Datatype::Float32 => "float32",
        Datatype::Float64 => "float64",
    }
}

/// Build the summary text. Separated from `run` so tests can check the
/// exact output without capturing stdout.
pub fn describe(path: &std::path::Path) -> Result<String> {
    let (header, volume) = read_image_file(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let [nx, ny, nz] = volume.shape;
    let [sx, sy, sz] = volume.spacing;

    let mut out = String::new();
    writeln!(out, "{}", path.display())?;
    writeln!(out, "shape {nx}x{ny}x{nz}, spacing {sx:.2} {sy:.2} {sz:.2}")?;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &volume.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    writeln!(
        out,
        "datatype {}, range [{lo:.3}, {hi:.3}]",
        datatype_name(header.datatype)
    )?;

    // A volume whose every voxel is an integer class id gets a histogram;
    // anything else is treated as an image and gets no further detail.
    let max_class = (CLASS_COUNT - 1) as f64;
    let is_labels = volume
        .data
        .iter()
        .all(|&v| v.fract() == 0.0 && (0.0..=max_class).contains(&v));
    if is_labels {
        let mut counts = [0usize; CLASS_COUNT];
        for &v in &volume.data {
            counts[v as usize] += 1;
        }
        let parts: Vec<String> = counts
            .iter()
            .enumerate()
            .map(|(c, n)| format!("{c}={n}"))
            .collect();
        writeln!(out, "labels: {}", parts.join(" "))?;
    }
    Ok(out)
}

pub fn run(args: &InfoArgs) -> Result<ExitCode> {
    print!("{}", describe(&args.path)?);
    Ok(ExitCode::SUCCESS)
}
