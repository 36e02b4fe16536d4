//! Volumetric CT segmentation toolkit.
//!
//! Everything needed to take kidney CT volumes from disk to a trained
//! miniature segmentation network and scored predictions, with no
//! external numerical dependencies:
//!
//! * [`nifti`] — single-file NIfTI-1 reading and writing, gzip-aware.
//! * [`volume`] — scalar/label grids, intensity windowing, foreground
//!   cropping.
//! * [`resample`] — trilinear / nearest resampling for spacing
//!   unification and fixed-shape resizing.
//! * [`sampler`] — class-balanced random patch extraction.
//! * [`pipeline`] — the named preprocessing presets composing the above.
//! * [`net`] — a small differentiable 3D encoder–decoder network with
//!   soft Dice loss, Adam, and a plateau learning-rate scheduler.
//! * [`metrics`] — smoothed Dice scoring and report serialization.
//! * [`rng`] — the fixed, platform-independent random generator that
//!   makes every seeded run reproducible.

pub mod metrics;
pub mod net;
pub mod nifti;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod sampler;
pub mod volume;
