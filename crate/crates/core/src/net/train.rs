//! The training loop, inference with tiling, and the loss-curve CSV.

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::volume::{LabelVolume, Volume};

use super::loss::{one_hot, soft_dice_loss};
use super::model::{NetworkConfig, SegNet};
use super::ops::{softmax_channels, softmax_channels_backward, NetError};
use super::optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
use super::tensor::Tensor5;

pub const CURVE_CSV_HEADER: &str = "epoch,train_loss,val_loss,lr";

/// Training hyperparameters. Defaults mirror the reference recipe
/// (rate 1e-4, 300 epochs, batch size 1, Adam, patience-10 / factor-10
/// plateau schedule, Dice smoothing 1); desk-scale runs pass fewer epochs
/// and usually a larger rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub smooth: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 1,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            smooth: 1.0,
            seed: 0,
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate in force during this epoch (reductions apply from the next).
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: SegNet,
    pub curve: Vec<EpochStats>,
}

/// Copy a volume into a `(1, 1, x, y, z)` tensor (volumes store x
/// fastest, tensors z fastest).
pub fn volume_to_tensor(v: &Volume) -> Tensor5 {
    let [nx, ny, nz] = v.shape;
    let mut t = Tensor5::zeros([1, 1, nx, ny, nz]);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                t.data[(x * ny + y) * nz + z] = v.data[x + nx * (y + ny * z)];
            }
        }
    }
    t
}

/// Standardize to mean 0 / standard deviation 1 (population, guarded for
/// constant inputs). Applied to every network input, at training and at
/// prediction time alike, so absolute intensity scale cannot destabilize
/// the early epochs.
pub fn standardize(t: &Tensor5) -> Tensor5 {
    let n = t.len() as f64;
    let mean = t.data.iter().sum::<f64>() / n;
    let var = t.data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-8).sqrt();
    let mut out = t.clone();
    for v in &mut out.data {
        *v = (*v - mean) * inv;
    }
    out
}

/// Train a fresh network on (image, label) pairs, monitoring validation
/// loss for the plateau schedule. Deterministic for a fixed seed: weight
/// initialization, epoch shuffling, and every arithmetic step are seeded
/// and single-threaded.
///
/// An empty validation set falls back to monitoring the training loss.
pub fn train(
    train_set: &[(Volume, LabelVolume)],
    val_set: &[(Volume, LabelVolume)],
    net_config: &NetworkConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
        return Err(NetError::BadConfig(format!(
            "learning_rate must be positive, got {}",
            config.learning_rate
        )));
    }
    if config.plateau.patience == 0 || config.plateau.factor <= 1.0 {
        return Err(NetError::BadConfig(
            "plateau schedule needs patience >= 1 and factor > 1".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(NetError::BadConfig("empty training set".into()));
    }

    let mut model = SegNet::new(net_config.clone(), config.seed)?;
    let mut adam = AdamState::new(model.parameter_count());
    let mut sched = PlateauScheduler::new(config.learning_rate, config.plateau);
    let mut shuffle_rng = SplitMix64::new(SplitMix64::derive_seed(config.seed, 1));

    let prepared: Vec<(Tensor5, Tensor5)> = train_set
        .iter()
        .map(|(img, lbl)| (standardize(&volume_to_tensor(img)), one_hot(lbl)))
        .collect();
    let prepared_val: Vec<(Tensor5, Tensor5)> = val_set
        .iter()
        .map(|(img, lbl)| (standardize(&volume_to_tensor(img)), one_hot(lbl)))
        .collect();

    let mut grads = vec![0.0; model.parameter_count()];
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let lr = sched.lr();
        shuffle_rng.shuffle(&mut order);

        let mut train_loss = 0.0;
        for &i in &order {
            let (image, target) = &prepared[i];
            let cache = model.forward(image)?;
            let probs = softmax_channels(&cache.logits);
            let (loss, dprobs) = soft_dice_loss(&probs, target, config.smooth)?;
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, value: loss });
            }
            train_loss += loss;
            let dlogits = softmax_channels_backward(&probs, &dprobs);
            grads.fill(0.0);
            model.backward(&cache, &dlogits, &mut grads)?;
            adam_step(model.parameters_mut(), &grads, &mut adam, &config.adam, lr)?;
        }
        train_loss /= prepared.len() as f64;

        let val_loss = if prepared_val.is_empty() {
            train_loss
        } else {
            let mut total = 0.0;
            for (image, target) in &prepared_val {
                let cache = model.forward(image)?;
                let probs = softmax_channels(&cache.logits);
                let (loss, _) = soft_dice_loss(&probs, target, config.smooth)?;
                if !loss.is_finite() {
                    return Err(NetError::NonFiniteLoss { epoch, value: loss });
                }
                total += loss;
            }
            total / prepared_val.len() as f64
        };

        sched.observe(val_loss);
        curve.push(EpochStats { epoch, train_loss, val_loss, lr });
    }

    Ok(TrainOutcome { model, curve })
}

/// How [`predict`] cuts volumes that exceed the network's footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PatchPolicy {
    /// Tile extents; `None` runs the whole volume as one tile, padded up
    /// to the network's divisibility requirement.
    pub tile: Option<[usize; 3]>,
}

/// Segment a volume: forward, per-voxel argmax over the class softmax.
/// Volumes larger than the tile are covered by non-overlapping tiles;
/// voxels beyond the volume edge are filled by replicating the nearest
/// edge voxel, and the padding is cropped away on stitching. Output shape
/// equals input shape.
pub fn predict(
    model: &SegNet,
    image: &Volume,
    policy: &PatchPolicy,
) -> Result<LabelVolume, NetError> {
    let [nx, ny, nz] = image.shape;
    let product = model.config.stride_product();
    let round_up = |n: usize| n.div_ceil(product) * product;
    let tile = match policy.tile {
        Some(t) => {
            if t.iter().any(|&n| n == 0 || n % product != 0) {
                return Err(NetError::IndivisibleInput { extents: t, product });
            }
            t
        }
        None => [round_up(nx), round_up(ny), round_up(nz)],
    };

    let mut labels = vec![0u8; nx * ny * nz];
    let mut origin = [0usize; 3];
    loop {
        let tensor = extract_tile_replicated(image, origin, tile);
        let cache = model.forward(&standardize(&tensor))?;
        let probs = softmax_channels(&cache.logits);
        write_argmax(&probs, origin, tile, [nx, ny, nz], &mut labels);

        // advance the tile origin, x fastest
        origin[0] += tile[0];
        if origin[0] >= nx {
            origin[0] = 0;
            origin[1] += tile[1];
            if origin[1] >= ny {
                origin[1] = 0;
                origin[2] += tile[2];
                if origin[2] >= nz {
                    break;
                }
            }
        }
    }
    Ok(LabelVolume {
        shape: image.shape,
        spacing: image.spacing,
        data: labels,
        affine: image.affine,
    })
}

fn extract_tile_replicated(image: &Volume, origin: [usize; 3], tile: [usize; 3]) -> Tensor5 {
    let [nx, ny, nz] = image.shape;
    let mut t = Tensor5::zeros([1, 1, tile[0], tile[1], tile[2]]);
    for x in 0..tile[0] {
        let sx = (origin[0] + x).min(nx - 1);
        for y in 0..tile[1] {
            let sy = (origin[1] + y).min(ny - 1);
            for z in 0..tile[2] {
                let sz = (origin[2] + z).min(nz - 1);
                t.data[(x * tile[1] + y) * tile[2] + z] =
                    image.data[sx + nx * (sy + ny * sz)];
            }
        }
    }
    t
}

fn write_argmax(
    probs: &Tensor5,
    origin: [usize; 3],
    tile: [usize; 3],
    shape: [usize; 3],
    labels: &mut [u8],
) {
    let [nx, ny, nz] = shape;
    let voxels = tile[0] * tile[1] * tile[2];
    for x in 0..tile[0] {
        let gx = origin[0] + x;
        if gx >= nx {
            break;
        }
        for y in 0..tile[1] {
            let gy = origin[1] + y;
            if gy >= ny {
                break;
            }
            for z in 0..tile[2] {
                let gz = origin[2] + z;
                if gz >= nz {
                    break;
                }
                let i = (x * tile[1] + y) * tile[2] + z;
                let mut best = 0u8;
                let mut best_p = probs.data[i];
                for c in 1..probs.channels() {
                    let p = probs.data[c * voxels + i];
                    if p > best_p {
                        best_p = p;
                        best = c as u8;
                    }
                }
                labels[gx + nx * (gy + ny * gz)] = best;
            }
        }
    }
}

/// Render the loss curve as CSV (full-precision floats, so a rerun with
/// the same seed reproduces the file byte for byte).
pub fn curve_to_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for row in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.lr
        ));
    }
    out
}

/// Parse a curve CSV produced by [`curve_to_csv`].
pub fn curve_from_csv(text: &str) -> Result<Vec<EpochStats>, NetError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CURVE_CSV_HEADER => {}
        other => {
            return Err(NetError::BadConfig(format!(
                "curve CSV must start with `{CURVE_CSV_HEADER}`, got {other:?}"
            )))
        }
    }
    let mut curve = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(NetError::BadConfig(format!(
                "curve CSV line {}: expected 4 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                NetError::BadConfig(format!("curve CSV line {}: bad {what} `{s}`", idx + 2))
            })
        };
        curve.push(EpochStats {
            epoch: fields[0].trim().parse::<usize>().map_err(|_| {
                NetError::BadConfig(format!("curve CSV line {}: bad epoch", idx + 2))
            })?,
            train_loss: parse_f(fields[1], "train_loss")?,
            val_loss: parse_f(fields[2], "val_loss")?,
            lr: parse_f(fields[3], "lr")?,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::synth::{generate_case, SynthConfig};

    fn tiny_net_config() -> NetworkConfig {
        NetworkConfig { channels: vec![4, 8, 8], ..NetworkConfig::default() }
    }

    fn tiny_cases(n: usize, seed: u64) -> Vec<(Volume, LabelVolume)> {
        let config = SynthConfig { shape: [8, 8, 4], ..SynthConfig::default() };
        (0..n)
            .map(|i| generate_case(&config, SplitMix64::derive_seed(seed, i as u64)))
            .collect()
    }

    #[test]
    fn loss_decreases_on_a_tiny_problem() {
        let train_set = tiny_cases(4, 1);
        let config = TrainConfig {
            epochs: 8,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let out = train(&train_set, &[], &tiny_net_config(), &config).unwrap();
        assert_eq!(out.curve.len(), 8);
        let first = out.curve.first().unwrap().train_loss;
        let last = out.curve.last().unwrap().train_loss;
        assert!(last < first, "no learning: {first} -> {last}");
    }

    #[test]
    fn same_seed_reproduces_the_curve_exactly() {
        let train_set = tiny_cases(3, 2);
        let val_set = tiny_cases(2, 99);
        let config = TrainConfig { epochs: 4, learning_rate: 1e-3, ..TrainConfig::default() };
        let a = train(&train_set, &val_set, &tiny_net_config(), &config).unwrap();
        let b = train(&train_set, &val_set, &tiny_net_config(), &config).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model.parameters(), b.model.parameters());
    }

    #[test]
    fn lr_trace_is_constant_while_improving() {
        let train_set = tiny_cases(3, 3);
        let config = TrainConfig { epochs: 5, learning_rate: 1e-3, ..TrainConfig::default() };
        let out = train(&train_set, &[], &tiny_net_config(), &config).unwrap();
        for row in &out.curve {
            assert_eq!(row.lr, 1e-3);
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let config = TrainConfig::default();
        assert!(train(&[], &[], &tiny_net_config(), &config).is_err());
    }

    #[test]
    fn predict_output_shape_matches_input() {
        let cases = tiny_cases(1, 4);
        let model = SegNet::new(tiny_net_config(), 1).unwrap();
        let mask = predict(&model, &cases[0].0, &PatchPolicy::default()).unwrap();
        assert_eq!(mask.shape, cases[0].0.shape);
        assert!(mask.data.iter().all(|&l| l <= 2));
    }

    #[test]
    fn head_biased_to_background_predicts_all_background() {
        let mut model = SegNet::new(tiny_net_config(), 1).unwrap();
        // zero the head weights, bias channel 0 high
        let wlen = model.tensor_values(model.parameters(), "head.weight").unwrap().len();
        model.set_tensor_values("head.weight", &vec![0.0; wlen]).unwrap();
        model.set_tensor_values("head.bias", &[10.0, 0.0, 0.0]).unwrap();
        let cases = tiny_cases(1, 5);
        let mask = predict(&model, &cases[0].0, &PatchPolicy::default()).unwrap();
        assert!(mask.data.iter().all(|&l| l == 0));
    }

    #[test]
    fn tiled_prediction_handles_non_divisible_volumes() {
        let image = Volume::new([10, 7, 5], [1.0; 3], vec![0.5; 350]).unwrap();
        let model = SegNet::new(tiny_net_config(), 1).unwrap();
        let mask = predict(&model, &image, &PatchPolicy { tile: Some([8, 8, 4]) }).unwrap();
        assert_eq!(mask.shape, [10, 7, 5]);
        // whole-volume padding path
        let mask2 = predict(&model, &image, &PatchPolicy::default()).unwrap();
        assert_eq!(mask2.shape, [10, 7, 5]);
    }

    #[test]
    fn predict_rejects_indivisible_tiles() {
        let image = Volume::new([8, 8, 4], [1.0; 3], vec![0.0; 256]).unwrap();
        let model = SegNet::new(tiny_net_config(), 1).unwrap();
        assert!(matches!(
            predict(&model, &image, &PatchPolicy { tile: Some([6, 8, 4]) }),
            Err(NetError::IndivisibleInput { .. })
        ));
    }

    #[test]
    fn curve_csv_round_trips() {
        let curve = vec![
            EpochStats { epoch: 1, train_loss: 0.9, val_loss: 0.95, lr: 1e-4 },
            EpochStats { epoch: 2, train_loss: 0.8123456789, val_loss: 0.85, lr: 1e-4 },
            EpochStats { epoch: 3, train_loss: 0.7, val_loss: 0.8, lr: 1e-5 },
        ];
        let csv = curve_to_csv(&curve);
        assert!(csv.starts_with("epoch,train_loss,val_loss,lr\n"));
        let back = curve_from_csv(&csv).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn curve_csv_rejects_wrong_header_and_field_count() {
        assert!(curve_from_csv("epoch,loss\n1,0.5").is_err());
        assert!(curve_from_csv("epoch,train_loss,val_loss,lr\n1,0.5,0.4").is_err());
        assert!(curve_from_csv("epoch,train_loss,val_loss,lr\n1,abc,0.4,1e-4").is_err());
    }

    #[test]
    fn volume_to_tensor_transposes_correctly() {
        // volume value = x + 10y + 100z
        let mut data = vec![0.0; 2 * 3 * 4];
        for z in 0..4 {
            for y in 0..3 {
                for x in 0..2 {
                    data[x + 2 * (y + 3 * z)] = (x + 10 * y + 100 * z) as f64;
                }
            }
        }
        let v = Volume::new([2, 3, 4], [1.0; 3], data).unwrap();
        let t = volume_to_tensor(&v);
        assert_eq!(t.dims, [1, 1, 2, 3, 4]);
        assert_eq!(t.get(0, 0, 1, 2, 3), 321.0);
        assert_eq!(t.get(0, 0, 0, 1, 2), 210.0);
    }

    #[test]
    fn standardize_centres_and_scales() {
        let t = Tensor5::from_vec([1, 1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = standardize(&t);
        let mean: f64 = s.data.iter().sum::<f64>() / 4.0;
        let var: f64 = s.data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
