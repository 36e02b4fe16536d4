//! Geometric resampling: spacing unification and fixed-shape resizing.
//!
//! Coordinate convention (part of the test contract): align-corners. An
//! output lattice of `n'` voxels maps index `j` to the continuous source
//! index `j * (n - 1) / (n' - 1)` when `n' > 1`, and to the source midpoint
//! `(n - 1) / 2` when `n' == 1`, so the first and last output samples land
//! exactly on the first and last source samples. Coordinates outside the
//! lattice are clamped to the boundary face (edge replication). Images are
//! interpolated trilinearly, labels with nearest-neighbour.

use crate::volume::{voxel_index, LabelVolume, Volume};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Trilinear,
    Nearest,
}

/// Target of a resampling operation: a physical spacing or a voxel shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResampleTarget {
    Spacing([f64; 3]),
    Shape([usize; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleSpec {
    pub mode: SampleMode,
    pub target: ResampleTarget,
}

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("label volumes must be resampled with nearest-neighbour mode")]
    ModeMismatch,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
}

/// Trilinear blend of the 8 lattice values enclosing continuous index `p`.
/// Total: out-of-range coordinates are clamped to the boundary face first.
pub fn trilinear_sample(v: &Volume, p: [f64; 3]) -> f64 {
    let [nx, ny, nz] = v.shape;
    let (x0, x1, tx) = split_coord(p[0], nx);
    let (y0, y1, ty) = split_coord(p[1], ny);
    let (z0, z1, tz) = split_coord(p[2], nz);

    let at = |x: usize, y: usize, z: usize| v.data[voxel_index(v.shape, x, y, z)];

    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
    let c0 = lerp(c00, c10, ty);
    let c1 = lerp(c01, c11, ty);
    lerp(c0, c1, tz)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Clamp a continuous coordinate into the lattice and split it into the
/// lower cell index, upper cell index, and in-cell fraction.
#[inline]
fn split_coord(p: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let p = p.clamp(0.0, max);
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64)
}

/// Nearest lattice value at continuous index `p` (ties round up, away from
/// the origin), with edge clamping.
fn nearest_sample_f64(data: &[f64], shape: [usize; 3], p: [f64; 3]) -> f64 {
    let idx = nearest_index(shape, p);
    data[idx]
}

fn nearest_index(shape: [usize; 3], p: [f64; 3]) -> usize {
    let mut q = [0usize; 3];
    for i in 0..3 {
        let max = (shape[i] - 1) as f64;
        q[i] = p[i].clamp(0.0, max).round().min(max) as usize;
    }
    voxel_index(shape, q[0], q[1], q[2])
}

/// Output extent for a spacing change: `max(1, round(n * s / s'))`,
/// round-half-away-from-zero.
pub fn spacing_output_extent(n: usize, source_spacing: f64, target_spacing: f64) -> usize {
    let n_new = (n as f64 * source_spacing / target_spacing).round();
    (n_new as usize).max(1)
}

/// Source index for output index `j` under the align-corners map.
#[inline]
fn source_coord(j: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out > 1 {
        j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    } else {
        (n_in - 1) as f64 / 2.0
    }
}

fn resample_scalar_grid(v: &Volume, out_shape: [usize; 3], mode: SampleMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_shape[0] * out_shape[1] * out_shape[2]);
    for z in 0..out_shape[2] {
        let pz = source_coord(z, v.shape[2], out_shape[2]);
        for y in 0..out_shape[1] {
            let py = source_coord(y, v.shape[1], out_shape[1]);
            for x in 0..out_shape[0] {
                let px = source_coord(x, v.shape[0], out_shape[0]);
                let value = match mode {
                    SampleMode::Trilinear => trilinear_sample(v, [px, py, pz]),
                    SampleMode::Nearest => nearest_sample_f64(&v.data, v.shape, [px, py, pz]),
                };
                out.push(value);
            }
        }
    }
    out
}

fn resample_label_grid(v: &LabelVolume, out_shape: [usize; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_shape[0] * out_shape[1] * out_shape[2]);
    for z in 0..out_shape[2] {
        let pz = source_coord(z, v.shape[2], out_shape[2]);
        for y in 0..out_shape[1] {
            let py = source_coord(y, v.shape[1], out_shape[1]);
            for x in 0..out_shape[0] {
                let px = source_coord(x, v.shape[0], out_shape[0]);
                out.push(v.data[nearest_index(v.shape, [px, py, pz])]);
            }
        }
    }
    out
}

/// Resample an image volume so its spacing becomes `target`.
pub fn resample_volume_to_spacing(
    v: &Volume,
    target: [f64; 3],
    mode: SampleMode,
) -> Result<Volume, ResampleError> {
    validate_spacing(target)?;
    let out_shape = [
        spacing_output_extent(v.shape[0], v.spacing[0], target[0]),
        spacing_output_extent(v.shape[1], v.spacing[1], target[1]),
        spacing_output_extent(v.shape[2], v.spacing[2], target[2]),
    ];
    Ok(Volume {
        shape: out_shape,
        spacing: target,
        data: resample_scalar_grid(v, out_shape, mode),
        affine: v.affine,
    })
}

/// Resample a label volume so its spacing becomes `target`. Nearest-mode
/// only: interpolation would fabricate fractional classes.
pub fn resample_label_to_spacing(
    v: &LabelVolume,
    target: [f64; 3],
    mode: SampleMode,
) -> Result<LabelVolume, ResampleError> {
    if mode != SampleMode::Nearest {
        return Err(ResampleError::ModeMismatch);
    }
    validate_spacing(target)?;
    let out_shape = [
        spacing_output_extent(v.shape[0], v.spacing[0], target[0]),
        spacing_output_extent(v.shape[1], v.spacing[1], target[1]),
        spacing_output_extent(v.shape[2], v.spacing[2], target[2]),
    ];
    Ok(LabelVolume {
        shape: out_shape,
        spacing: target,
        data: resample_label_grid(v, out_shape),
        affine: v.affine,
    })
}

/// Resize an image volume onto a fixed target lattice. Output spacing is
/// rescaled so physical extent is preserved under the align-corners map:
/// `s' = s * (n - 1) / (n' - 1)` for `n' > 1`, else `s * n`.
pub fn resize_volume_to_shape(
    v: &Volume,
    target: [usize; 3],
    mode: SampleMode,
) -> Result<Volume, ResampleError> {
    validate_shape(target)?;
    Ok(Volume {
        shape: target,
        spacing: resized_spacing(v.shape, v.spacing, target),
        data: resample_scalar_grid(v, target, mode),
        affine: v.affine,
    })
}

/// Resize a label volume onto a fixed target lattice (nearest-mode only).
pub fn resize_label_to_shape(
    v: &LabelVolume,
    target: [usize; 3],
    mode: SampleMode,
) -> Result<LabelVolume, ResampleError> {
    if mode != SampleMode::Nearest {
        return Err(ResampleError::ModeMismatch);
    }
    validate_shape(target)?;
    Ok(LabelVolume {
        shape: target,
        spacing: resized_spacing(v.shape, v.spacing, target),
        data: resample_label_grid(v, target),
        affine: v.affine,
    })
}

fn resized_spacing(shape: [usize; 3], spacing: [f64; 3], target: [usize; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = if target[i] > 1 {
            spacing[i] * (shape[i] - 1) as f64 / (target[i] - 1) as f64
        } else {
            spacing[i] * shape[i] as f64
        };
    }
    out
}

fn validate_spacing(s: [f64; 3]) -> Result<(), ResampleError> {
    if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(ResampleError::InvalidTarget(format!(
            "spacing must be positive and finite, got {s:?}"
        )));
    }
    Ok(())
}

fn validate_shape(s: [usize; 3]) -> Result<(), ResampleError> {
    if s.iter().any(|&x| x == 0) {
        return Err(ResampleError::InvalidTarget(format!(
            "shape must be >= 1 per axis, got {s:?}"
        )));
    }
    Ok(())
}
