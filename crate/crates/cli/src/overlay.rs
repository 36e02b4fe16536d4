//! `volseg overlay` — render one slice of a CT volume as a grayscale
//! image with the segmentation mask tinted on top (kidney red, tumour
//! green), written as a binary PPM.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use thiserror::Error;
use volseg_core::nifti::{read_image_file, read_label_file};
use volseg_core::volume::{LabelVolume, Volume, CLIP_HI, CLIP_LO};

use crate::ppm::Image;
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Fix z: width runs along x, height along y
    Axial,
    /// Fix y: width runs along x, height along z
    Coronal,
    /// Fix x: width runs along y, height along z
    Sagittal,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        })
    }
}

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("slice {index} out of range: {axis} axis has {extent} slices")]
    SliceOutOfRange {
        axis: Axis,
        index: usize,
        extent: usize,
    },
    #[error("image shape {image:?} does not match mask shape {mask:?}")]
    ShapeMismatch {
        image: [usize; 3],
        mask: [usize; 3],
    },
}

#[derive(Args, Debug)]
pub struct OverlayArgs {
    /// CT image volume
    #[arg(long)]
    pub image: PathBuf,

    /// Segmentation label volume (same shape as the image)
    #[arg(long)]
    pub labels: PathBuf,

    /// Slice orientation
    #[arg(long, value_enum, default_value_t = Axis::Axial)]
    pub axis: Axis,

    /// Slice index along the fixed axis
    #[arg(long)]
    pub slice: usize,

    /// Intensity window as lo:hi in HU (defaults to the training clip range)
    #[arg(long)]
    pub window: Option<String>,

    /// Output PPM file
    #[arg(long)]
    pub output: PathBuf,
}

fn parse_window(text: &str) -> Result<(f64, f64)> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("window bound `{s}` is not a number")))
    };
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| usage(format!("window `{text}` must look like lo:hi")))?;
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo < hi) {
        return Err(usage(format!("window lo must be below hi, got {lo}:{hi}")));
    }
    Ok((lo, hi))
}

/// 50 % blend between the windowed gray value and a pure tint channel.
fn blend(gray: u8, tint: u8) -> u8 {
    ((gray as u16 + tint as u16) / 2) as u8
}

/// Render one slice. Pixel rows follow image convention (row 0 at the
/// top), and the fast voxel axis of each orientation runs along pixel x.
pub fn render_overlay(
    image: &Volume,
    labels: &LabelVolume,
    axis: Axis,
    slice: usize,
    window: (f64, f64),
) -> Result<Image, OverlayError> {
    if image.shape != labels.shape {
        return Err(OverlayError::ShapeMismatch {
            image: image.shape,
            mask: labels.shape,
        });
    }
    let [nx, ny, nz] = image.shape;
    let (width, height, extent) = match axis {
        Axis::Axial => (nx, ny, nz),
        Axis::Coronal => (nx, nz, ny),
        Axis::Sagittal => (ny, nz, nx),
    };
    if slice >= extent {
        return Err(OverlayError::SliceOutOfRange {
            axis,
            index: slice,
            extent,
        });
    }

    let (lo, hi) = window;
    let mut out = Image::new(width, height);
    for py in 0..height {
        for px in 0..width {
            let voxel = match axis {
                Axis::Axial => [px, py, slice],
                Axis::Coronal => [px, slice, py],
                Axis::Sagittal => [slice, px, py],
            };
            let idx = voxel[0] + nx * (voxel[1] + ny * voxel[2]);
            let t = ((image.data[idx] - lo) / (hi - lo)).clamp(0.0, 1.0);
            let gray = (t * 255.0).round() as u8;
            let rgb = match labels.data[idx] {
                1 => [blend(gray, 255), blend(gray, 0), blend(gray, 0)],
                2 => [blend(gray, 0), blend(gray, 255), blend(gray, 0)],
                _ => [gray, gray, gray],
            };
            out.put(px, py, rgb);
        }
    }
    Ok(out)
}

pub fn run(args: &OverlayArgs) -> Result<ExitCode> {
    let window = match &args.window {
        Some(text) => parse_window(text)?,
        None => (CLIP_LO, CLIP_HI),
    };
    let (_, image) = read_image_file(&args.image)
        .with_context(|| format!("cannot read image {}", args.image.display()))?;
    let (_, labels) = read_label_file(&args.labels)
        .with_context(|| format!("cannot read labels {}", args.labels.display()))?;
    let rendered = render_overlay(&image, &labels, args.axis, args.slice, window)?;
    rendered
        .write(&args.output)
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    println!(
        "wrote {} ({}x{} pixels, {} slice {})",
        args.output.display(),
        rendered.width,
        rendered.height,
        args.axis,
        args.slice
    );
    Ok(ExitCode::SUCCESS)
}
