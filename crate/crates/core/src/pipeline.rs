//! The per-case preprocessing pipeline and its three named presets.
//!
//! Every case runs the same prefix — resample to a common voxel spacing,
//! clip intensities to the kidney window, crop to the foreground box —
//! and then diverges by preset:
//!
//! * `model1`: resize the cropped volume to a fixed grid.
//! * `model2`: draw random class-balanced patches at full resolution.
//! * `model3`: resize first, then draw patches. With the default sizes the
//!   patch equals the resized grid, so all four "crops" are the whole
//!   volume — four copies per case. That duplication is intentional and
//!   kept: the extra samples per case are the point of the preset.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resample::{
    resample_label_to_spacing, resample_volume_to_spacing, resize_label_to_shape,
    resize_volume_to_shape, ResampleError, SampleMode,
};
use crate::sampler::{sample_patches, PatchSamplerConfig, SamplerError};
use crate::volume::{
    clip_intensity, crop_pair, foreground_bbox, BBox, LabelVolume, Volume, VolumeError, CLIP_HI,
    CLIP_LO,
};

pub const DEFAULT_TARGET_SPACING: [f64; 3] = [1.62, 1.62, 3.22];
pub const DEFAULT_RESIZE_SHAPE: [usize; 3] = [128, 128, 32];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("unknown preset {0:?}; expected model1, model2 or model3")]
    UnknownPreset(String),
    #[error("clip range [{lo}, {hi}] is not an interval")]
    BadClipRange { lo: f64, hi: f64 },
}

/// The three preprocessing recipes, by their published column names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Model1,
    Model2,
    Model3,
}

impl FromStr for Preset {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model1" => Ok(Preset::Model1),
            "model2" => Ok(Preset::Model2),
            "model3" => Ok(Preset::Model3),
            other => Err(PipelineError::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Model1 => "model1",
            Preset::Model2 => "model2",
            Preset::Model3 => "model3",
        })
    }
}

/// Full pipeline configuration. The serde defaults mean an empty JSON
/// object is a valid config equal to `PipelineConfig::default()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub target_spacing: [f64; 3],
    pub clip_range: [f64; 2],
    pub crop_foreground: bool,
    pub resize_shape: Option<[usize; 3]>,
    pub patch: Option<PatchSamplerConfig>,
    pub seed: u64,
    pub preset: Option<Preset>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_spacing: DEFAULT_TARGET_SPACING,
            clip_range: [CLIP_LO, CLIP_HI],
            crop_foreground: true,
            resize_shape: None,
            patch: None,
            seed: 0,
            preset: None,
        }
    }
}

impl PipelineConfig {
    /// Resolve `preset` into concrete resize/patch settings, leaving any
    /// explicitly-set field alone so a config file can override preset
    /// details (e.g. a smaller patch for smoke tests).
    pub fn resolved(mut self) -> Self {
        match self.preset {
            Some(Preset::Model1) => {
                self.resize_shape.get_or_insert(DEFAULT_RESIZE_SHAPE);
                self.patch = None;
            }
            Some(Preset::Model2) => {
                self.resize_shape = None;
                self.patch.get_or_insert_with(PatchSamplerConfig::default);
            }
            Some(Preset::Model3) => {
                self.resize_shape.get_or_insert(DEFAULT_RESIZE_SHAPE);
                self.patch.get_or_insert_with(PatchSamplerConfig::default);
            }
            None => {}
        }
        self
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let [lo, hi] = self.clip_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PipelineError::BadClipRange { lo, hi });
        }
        Ok(())
    }
}

/// One pipeline stage, in execution order. The serialized form of
/// [`expand_steps`] is the machine-readable statement of what a preset
/// does, and is stable byte-for-byte for a fixed config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PreprocessStep {
    UnifySpacing { target: [f64; 3] },
    ClipIntensity { lo: f64, hi: f64 },
    CropForeground { threshold: f64 },
    Resize { shape: [usize; 3] },
    SamplePatches { patch_size: [usize; 3], num_samples: usize, pos: f64, neg: f64 },
}

/// Expand a (resolved) config into its ordered step list.
pub fn expand_steps(config: &PipelineConfig) -> Vec<PreprocessStep> {
    let mut steps = vec![
        PreprocessStep::UnifySpacing { target: config.target_spacing },
        PreprocessStep::ClipIntensity { lo: config.clip_range[0], hi: config.clip_range[1] },
    ];
    if config.crop_foreground {
        steps.push(PreprocessStep::CropForeground { threshold: config.clip_range[0] });
    }
    if let Some(shape) = config.resize_shape {
        steps.push(PreprocessStep::Resize { shape });
    }
    if let Some(p) = &config.patch {
        steps.push(PreprocessStep::SamplePatches {
            patch_size: p.patch_size,
            num_samples: p.num_samples,
            pos: p.pos,
            neg: p.neg,
        });
    }
    steps
}

/// What one case went through: recorded alongside the outputs so a run
/// can be audited or replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub input_shape: [usize; 3],
    pub input_spacing: [f64; 3],
    pub resampled_shape: [usize; 3],
    pub crop_box: Option<BBox>,
    pub output_shapes: Vec<[usize; 3]>,
    pub seed: u64,
}

/// Preprocessed outputs for one case: one image/label pair for resize
/// presets, `num_samples` pairs when patches are drawn.
#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub pairs: Vec<(Volume, LabelVolume)>,
    pub record: CaseRecord,
}

/// Run the full pipeline on one case. `seed` feeds the patch stage only;
/// callers processing many cases should derive a distinct seed per case.
pub fn run_case(
    image: &Volume,
    label: &LabelVolume,
    config: &PipelineConfig,
    seed: u64,
) -> Result<CaseOutput, PipelineError> {
    config.validate()?;
    if image.shape != label.shape {
        return Err(VolumeError::ShapeMismatch {
            left: image.shape,
            right: label.shape,
        }
        .into());
    }
    let input_shape = image.shape;
    let input_spacing = image.spacing;

    let mut img =
        resample_volume_to_spacing(image, config.target_spacing, SampleMode::Trilinear)?;
    let mut lbl = resample_label_to_spacing(label, config.target_spacing, SampleMode::Nearest)?;
    let resampled_shape = img.shape;

    img = clip_intensity(&img, config.clip_range[0], config.clip_range[1])?;

    let mut crop_box = None;
    if config.crop_foreground {
        let bbox = foreground_bbox(&img, config.clip_range[0])?;
        let (ci, cl) = crop_pair(&img, &lbl, &bbox)?;
        img = ci;
        lbl = cl;
        crop_box = Some(bbox);
    }

    if let Some(shape) = config.resize_shape {
        img = resize_volume_to_shape(&img, shape, SampleMode::Trilinear)?;
        lbl = resize_label_to_shape(&lbl, shape, SampleMode::Nearest)?;
    }

    let pairs: Vec<(Volume, LabelVolume)> = match &config.patch {
        Some(p) => {
            let per_case = PatchSamplerConfig { seed, ..p.clone() };
            sample_patches(&img, &lbl, &per_case)?
                .into_iter()
                .map(|patch| (patch.image, patch.label))
                .collect()
        }
        None => vec![(img, lbl)],
    };

    let record = CaseRecord {
        input_shape,
        input_spacing,
        resampled_shape,
        crop_box,
        output_shapes: pairs.iter().map(|(v, _)| v.shape).collect(),
        seed,
    };
    Ok(CaseOutput { pairs, record })
}
