//! Synthetic CT-like cases for tests and the training demo.
//!
//! Each case is an ellipsoidal "kidney" (class 1) containing a smaller
//! "tumour" blob (class 2) on a noisy soft-tissue background, with an
//! optional air margin around the body so the foreground-cropping path
//! has something to remove. Geometry and noise are drawn from a seeded
//! generator, so a case is a pure function of its seed.

use crate::rng::SplitMix64;
use crate::volume::{LabelVolume, Volume};

/// Intensity and geometry knobs, in rough Hounsfield terms: background
/// soft tissue near water (0), kidney parenchyma bright (contrast
/// enhanced), tumour brighter still — well separated so a small network
/// can learn the mapping quickly.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background_hu: f64,
    pub kidney_hu: f64,
    pub tumour_hu: f64,
    pub air_hu: f64,
    /// Number of voxels on each face filled with air (label 0); zero
    /// disables the margin.
    pub air_margin: usize,
    pub noise_sd: f64,
    /// Tumour semi-axes as a fraction of the kidney's, drawn uniformly
    /// from this range. Larger fractions make the tumour an easier
    /// learning target.
    pub tumour_frac: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            shape: [16, 16, 8],
            spacing: [1.62, 1.62, 3.22],
            background_hu: 0.0,
            kidney_hu: 120.0,
            tumour_hu: 250.0,
            air_hu: -1000.0,
            air_margin: 0,
            noise_sd: 10.0,
            tumour_frac: [0.35, 0.5],
        }
    }
}

struct Ellipsoid {
    centre: [f64; 3],
    semi_axes: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [usize; 3]) -> bool {
        let mut q = 0.0;
        for i in 0..3 {
            let d = (p[i] as f64 - self.centre[i]) / self.semi_axes[i];
            q += d * d;
        }
        q <= 1.0
    }
}

/// Generate one (image, mask) pair. The mask always contains at least one
/// voxel of each class: the tumour centre voxel is forced to class 2 in
/// the rare geometries where the rasterized blob would otherwise vanish.
pub fn generate_case(config: &SynthConfig, seed: u64) -> (Volume, LabelVolume) {
    let mut rng = SplitMix64::new(seed);
    let [nx, ny, nz] = config.shape;
    let m = config.air_margin;
    debug_assert!(nx > 2 * m + 2 && ny > 2 * m + 2 && nz > 2 * m + 2);

    // kidney: centred near the body middle with jitter, spanning roughly
    // half the body extent
    let body = [nx - 2 * m, ny - 2 * m, nz - 2 * m];
    let mut centre = [0.0; 3];
    let mut axes = [0.0; 3];
    for i in 0..3 {
        let n = body[i] as f64;
        centre[i] = m as f64 + n * (0.5 + 0.12 * (2.0 * rng.next_f64() - 1.0));
        axes[i] = n * (0.25 + 0.10 * rng.next_f64());
    }
    let kidney = Ellipsoid { centre, semi_axes: axes };

    // tumour: smaller blob, centre displaced but kept inside the kidney
    let mut t_centre = [0.0; 3];
    let mut t_axes = [0.0; 3];
    let [frac_lo, frac_hi] = config.tumour_frac;
    for i in 0..3 {
        t_centre[i] = centre[i] + 0.35 * axes[i] * (2.0 * rng.next_f64() - 1.0);
        t_axes[i] = (axes[i] * (frac_lo + (frac_hi - frac_lo) * rng.next_f64())).max(0.8);
    }
    let tumour = Ellipsoid { centre: t_centre, semi_axes: t_axes };

    let count = nx * ny * nz;
    let mut labels = vec![0u8; count];
    let mut image = vec![0.0f64; count];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let in_margin = m > 0
                    && (x < m || y < m || z < m || x >= nx - m || y >= ny - m || z >= nz - m);
                let (label, base) = if in_margin {
                    (0u8, config.air_hu)
                } else if tumour.contains([x, y, z]) && kidney.contains([x, y, z]) {
                    (2, config.tumour_hu)
                } else if kidney.contains([x, y, z]) {
                    (1, config.kidney_hu)
                } else {
                    (0, config.background_hu)
                };
                labels[i] = label;
                image[i] = base + config.noise_sd * rng.next_normal();
            }
        }
    }

    // guarantee every class is present
    let force = |labels: &mut [u8], image: &mut [f64], c: [f64; 3], label: u8, hu: f64| {
        let x = (c[0].round() as usize).clamp(m, nx - 1 - m);
        let y = (c[1].round() as usize).clamp(m, ny - 1 - m);
        let z = (c[2].round() as usize).clamp(m, nz - 1 - m);
        let i = x + nx * (y + ny * z);
        if !labels.contains(&label) {
            labels[i] = label;
            image[i] = hu;
        }
    };
    force(&mut labels, &mut image, centre, 1, config.kidney_hu);
    force(&mut labels, &mut image, t_centre, 2, config.tumour_hu);

    let volume = Volume::new(config.shape, config.spacing, image).expect("consistent shape");
    let mask = LabelVolume::new(config.shape, config.spacing, labels).expect("consistent shape");
    (volume, mask)
}
