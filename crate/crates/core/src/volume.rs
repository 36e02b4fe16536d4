//! Core grid types: scalar volumes, label volumes, and bounding boxes,
//! plus the intensity-window and foreground-crop operations applied to
//! every case before sampling.
//!
//! Voxels are stored x-fastest: index `(x, y, z)` maps to
//! `x + nx * (y + ny * z)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound of the kidney intensity window. Voxels are clipped to
/// `[CLIP_LO, CLIP_HI]` and anything at the floor is treated as
/// non-informative background when searching for the foreground box.
pub const CLIP_LO: f64 = -79.0;
/// Upper bound of the kidney intensity window.
pub const CLIP_HI: f64 = 304.0;

/// Number of segmentation classes: background, kidney, kidney tumour.
pub const CLASS_COUNT: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("invalid clip range: lo {lo} must be < hi {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("no voxel exceeds the foreground threshold {threshold}")]
    EmptyForeground { threshold: f64 },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: [usize; 3],
        right: [usize; 3],
    },
    #[error("box {bbox:?} out of bounds for shape {shape:?}")]
    BoxOutOfBounds { bbox: BBox, shape: [usize; 3] },
    #[error("label value {0} outside {{0, 1, 2}}")]
    InvalidLabel(u8),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLengthMismatch { len: usize, shape: [usize; 3] },
}

/// A 3D scalar grid with per-axis voxel spacing in millimetres.
///
/// The affine, when present, is carried through untouched; only spacing
/// participates in resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<f64>,
    pub affine: Option<[[f64; 4]; 4]>,
}

/// A 3D integer grid over classes {0 background, 1 kidney, 2 tumour},
/// sharing [`Volume`] geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<u8>,
    pub affine: Option<[[f64; 4]; 4]>,
}

/// Per-axis inclusive index ranges, `lo[i] <= hi[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BBox {
    pub fn full(shape: [usize; 3]) -> Self {
        Self {
            lo: [0, 0, 0],
            hi: [shape[0] - 1, shape[1] - 1, shape[2] - 1],
        }
    }

    /// Extent (voxel count) along each axis.
    pub fn extent(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    pub fn contains_shape(&self, shape: [usize; 3]) -> bool {
        (0..3).all(|i| self.lo[i] <= self.hi[i] && self.hi[i] < shape[i])
    }

    /// Compose a crop-of-a-crop: `inner` is expressed in the coordinates of
    /// the volume already cropped by `self`; the result addresses the
    /// original volume.
    pub fn compose(&self, inner: &BBox) -> BBox {
        BBox {
            lo: [
                self.lo[0] + inner.lo[0],
                self.lo[1] + inner.lo[1],
                self.lo[2] + inner.lo[2],
            ],
            hi: [
                self.lo[0] + inner.hi[0],
                self.lo[1] + inner.hi[1],
                self.lo[2] + inner.hi[2],
            ],
        }
    }
}

#[inline]
pub fn voxel_index(shape: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    debug_assert!(x < shape[0] && y < shape[1] && z < shape[2]);
    x + shape[0] * (y + shape[1] * z)
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self, VolumeError> {
        if data.len() != shape[0] * shape[1] * shape[2] {
            return Err(VolumeError::DataLengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            spacing,
            data,
            affine: None,
        })
    }

    pub fn filled(shape: [usize; 3], spacing: [f64; 3], value: f64) -> Self {
        Self {
            shape,
            spacing,
            data: vec![value; shape[0] * shape[1] * shape[2]],
            affine: None,
        }
    }

    pub fn with_affine(mut self, affine: Option<[[f64; 4]; 4]>) -> Self {
        self.affine = affine;
        self
    }

    pub fn voxel_count(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[voxel_index(self.shape, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        self.data[voxel_index(self.shape, x, y, z)] = v;
    }
}

impl LabelVolume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], data: Vec<u8>) -> Result<Self, VolumeError> {
        if data.len() != shape[0] * shape[1] * shape[2] {
            return Err(VolumeError::DataLengthMismatch {
                len: data.len(),
                shape,
            });
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize >= CLASS_COUNT) {
            return Err(VolumeError::InvalidLabel(bad));
        }
        Ok(Self {
            shape,
            spacing,
            data,
            affine: None,
        })
    }

    pub fn zeros(shape: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            shape,
            spacing,
            data: vec![0; shape[0] * shape[1] * shape[2]],
            affine: None,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[voxel_index(self.shape, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        self.data[voxel_index(self.shape, x, y, z)] = v;
    }

    /// Voxel counts per class, indexed by class id.
    pub fn class_histogram(&self) -> [usize; CLASS_COUNT] {
        let mut counts = [0usize; CLASS_COUNT];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// Clamp every voxel into `[lo, hi]`. Shape and spacing are unchanged.
pub fn clip_intensity(v: &Volume, lo: f64, hi: f64) -> Result<Volume, VolumeError> {
    if lo >= hi {
        return Err(VolumeError::InvalidRange { lo, hi });
    }
    let mut out = v.clone();
    for x in &mut out.data {
        *x = x.clamp(lo, hi);
    }
    Ok(out)
}

/// Tightest box containing every voxel with value strictly above
/// `threshold`.
pub fn foreground_bbox(v: &Volume, threshold: f64) -> Result<BBox, VolumeError> {
    let [nx, ny, nz] = v.shape;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    let mut idx = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v.data[idx] > threshold {
                    any = true;
                    let p = [x, y, z];
                    for i in 0..3 {
                        lo[i] = lo[i].min(p[i]);
                        hi[i] = hi[i].max(p[i]);
                    }
                }
                idx += 1;
            }
        }
    }
    if !any {
        return Err(VolumeError::EmptyForeground { threshold });
    }
    Ok(BBox { lo, hi })
}

/// Restrict an image/label pair to `bbox`. Spacing is preserved; the label
/// value set can only shrink.
pub fn crop_pair(
    img: &Volume,
    lbl: &LabelVolume,
    bbox: &BBox,
) -> Result<(Volume, LabelVolume), VolumeError> {
    if img.shape != lbl.shape {
        return Err(VolumeError::ShapeMismatch {
            left: img.shape,
            right: lbl.shape,
        });
    }
    if !bbox.contains_shape(img.shape) {
        return Err(VolumeError::BoxOutOfBounds {
            bbox: *bbox,
            shape: img.shape,
        });
    }
    let out_shape = bbox.extent();
    let n = out_shape[0] * out_shape[1] * out_shape[2];
    let mut img_data = Vec::with_capacity(n);
    let mut lbl_data = Vec::with_capacity(n);
    for z in bbox.lo[2]..=bbox.hi[2] {
        for y in bbox.lo[1]..=bbox.hi[1] {
            let row = voxel_index(img.shape, bbox.lo[0], y, z);
            img_data.extend_from_slice(&img.data[row..row + out_shape[0]]);
            lbl_data.extend_from_slice(&lbl.data[row..row + out_shape[0]]);
        }
    }
    let out_img = Volume {
        shape: out_shape,
        spacing: img.spacing,
        data: img_data,
        affine: img.affine,
    };
    let out_lbl = LabelVolume {
        shape: out_shape,
        spacing: lbl.spacing,
        data: lbl_data,
        affine: lbl.affine,
    };
    Ok((out_img, out_lbl))
}
