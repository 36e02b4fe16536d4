//! Soft Dice loss over the foreground classes.
//!
//! The loss treats the softmax probabilities as fuzzy set memberships and
//! scores the overlap of each foreground class (kidney = 1, tumour = 2)
//! against the one-hot reference, smoothed so empty classes are handled
//! gracefully. Background is deliberately excluded: it dominates the
//! volume and would swamp the clinically interesting classes.

use crate::volume::{LabelVolume, CLASS_COUNT};

use super::ops::NetError;
use super::tensor::Tensor5;

/// One-hot encode a label volume as a `(1, 3, x, y, z)` tensor.
pub fn one_hot(labels: &LabelVolume) -> Tensor5 {
    let [nx, ny, nz] = labels.shape;
    let mut out = Tensor5::zeros([1, CLASS_COUNT, nx, ny, nz]);
    let voxels = nx * ny * nz;
    // label volumes are x-fastest, tensors z-fastest
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let class = labels.data[x + nx * (y + ny * z)] as usize;
                let i = (x * ny + y) * nz + z;
                out.data[class * voxels + i] = 1.0;
            }
        }
    }
    out
}

/// Mean soft Dice over classes 1 and 2, returned as `1 - mean` together
/// with the exact gradient with respect to the probability tensor.
///
/// Per class `c`: `dice_c = (2·Σ p_c·t_c + s) / (Σ p_c + Σ t_c + s)`,
/// sums running over every voxel of every instance in the batch. The
/// gradient of the loss in `p_c[i]` is
/// `-(1/2) · (2·t_c[i]·den - num) / den²`; background gets zero gradient.
pub fn soft_dice_loss(
    probs: &Tensor5,
    target: &Tensor5,
    smooth: f64,
) -> Result<(f64, Tensor5), NetError> {
    probs.same_shape(target)?;
    let ch = probs.channels();
    let voxels = probs.dims[2] * probs.dims[3] * probs.dims[4];
    let mut grad = Tensor5::zeros(probs.dims);

    let foreground = [1, 2];
    let mut mean_dice = 0.0;
    for &c in &foreground {
        let mut inter = 0.0;
        let mut p_sum = 0.0;
        let mut t_sum = 0.0;
        for b in 0..probs.batch() {
            let base = (b * ch + c) * voxels;
            for i in base..base + voxels {
                inter += probs.data[i] * target.data[i];
                p_sum += probs.data[i];
                t_sum += target.data[i];
            }
        }
        let num = 2.0 * inter + smooth;
        let den = p_sum + t_sum + smooth;
        mean_dice += num / den / foreground.len() as f64;

        let scale = -1.0 / (foreground.len() as f64 * den * den);
        for b in 0..probs.batch() {
            let base = (b * ch + c) * voxels;
            for i in base..base + voxels {
                grad.data[i] = scale * (2.0 * target.data[i] * den - num);
            }
        }
    }
    Ok((1.0 - mean_dice, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::volume::LabelVolume;

    fn labels_2x2x2(values: [u8; 8]) -> LabelVolume {
        LabelVolume::new([2, 2, 2], [1.0, 1.0, 1.0], values.to_vec()).unwrap()
    }

    #[test]
    fn one_hot_routes_each_class() {
        let labels = labels_2x2x2([0, 1, 2, 0, 1, 1, 2, 0]);
        let t = one_hot(&labels);
        assert_eq!(t.dims, [1, 3, 2, 2, 2]);
        // exactly one class active per voxel
        for v in 0..8 {
            let sum: f64 = (0..3).map(|c| t.data[c * 8 + v]).sum();
            assert_eq!(sum, 1.0);
        }
        // class counts match the label histogram
        let count = |c: usize| t.data[c * 8..(c + 1) * 8].iter().sum::<f64>();
        assert_eq!(count(0), 3.0);
        assert_eq!(count(1), 3.0);
        assert_eq!(count(2), 2.0);
    }

    #[test]
    fn one_hot_transposes_axis_order() {
        // mark exactly voxel (x=1, y=0, z=0) as kidney
        let labels = labels_2x2x2([0, 1, 0, 0, 0, 0, 0, 0]);
        let t = one_hot(&labels);
        assert_eq!(t.get(0, 1, 1, 0, 0), 1.0);
        assert_eq!(t.get(0, 0, 1, 0, 0), 0.0);
    }

    #[test]
    fn perfect_confident_prediction_scores_near_zero() {
        let labels = labels_2x2x2([0, 1, 2, 0, 1, 1, 2, 0]);
        let target = one_hot(&labels);
        let (loss, _) = soft_dice_loss(&target, &target, 1.0).unwrap();
        // smoothing keeps the optimum slightly above zero
        // class 1: (2*3+1)/(3+3+1) = 1, class 2: (2*2+1)/(2+2+1) = 1
        assert!((loss - 0.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_matches_hand_computation() {
        let labels = labels_2x2x2([0, 1, 2, 0, 1, 1, 2, 0]);
        let target = one_hot(&labels);
        let probs = Tensor5::from_vec([1, 3, 2, 2, 2], vec![1.0 / 3.0; 24]).unwrap();
        let (loss, _) = soft_dice_loss(&probs, &target, 1.0).unwrap();
        // class 1: (2*1+1)/(8/3+3+1) = 3/(20/3) = 0.45
        // class 2: (2*(2/3)+1)/(8/3+2+1) = (7/3)/(17/3) = 7/17
        let expected = 1.0 - 0.5 * (0.45 + 7.0 / 17.0);
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn background_probabilities_get_no_gradient() {
        let labels = labels_2x2x2([0, 1, 2, 0, 1, 1, 2, 0]);
        let target = one_hot(&labels);
        let mut rng = SplitMix64::new(7);
        let mut probs = Tensor5::random_uniform([1, 3, 2, 2, 2], 1.0, &mut rng);
        for v in &mut probs.data {
            *v = v.abs();
        }
        let (_, grad) = soft_dice_loss(&probs, &target, 1.0).unwrap();
        assert!(grad.data[..8].iter().all(|&g| g == 0.0));
        assert!(grad.data[8..].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_on_raw_probabilities() {
        let labels = labels_2x2x2([0, 1, 2, 0, 1, 1, 2, 0]);
        let target = one_hot(&labels);
        let mut rng = SplitMix64::new(8);
        let mut probs = Tensor5::zeros([1, 3, 2, 2, 2]);
        for v in &mut probs.data {
            *v = 0.2 + 0.6 * rng.next_f64();
        }
        let (_, grad) = soft_dice_loss(&probs, &target, 1.0).unwrap();
        for i in 0..probs.len() {
            let h = 1e-6;
            let mut plus = probs.clone();
            plus.data[i] += h;
            let mut minus = probs.clone();
            minus.data[i] -= h;
            let (lp, _) = soft_dice_loss(&plus, &target, 1.0).unwrap();
            let (lm, _) = soft_dice_loss(&minus, &target, 1.0).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad.data[i] - fd).abs() < 1e-6,
                "voxel {i}: analytic {} vs fd {fd}",
                grad.data[i]
            );
        }
    }

    #[test]
    fn empty_foreground_with_empty_prediction_is_perfect() {
        let labels = labels_2x2x2([0; 8]);
        let target = one_hot(&labels);
        let mut probs = Tensor5::zeros([1, 3, 2, 2, 2]);
        for i in 0..8 {
            probs.data[i] = 1.0; // all mass on background
        }
        let (loss, _) = soft_dice_loss(&probs, &target, 1.0).unwrap();
        // numerator and denominator both reduce to the smoothing term
        assert_eq!(loss, 0.0);
    }
}
