//! Finite-difference verification of every backward pass.
//!
//! Each check builds a small randomized problem, reduces the output to a
//! scalar through a fixed random probe (`scalar = Σ probe ⊙ output`), and
//! compares the analytic gradient of that scalar against central finite
//! differences `(f(x+h) - f(x-h)) / 2h` with `h = 1e-5·max(1, |x|)`, in
//! double precision, for every input and parameter coordinate.
//!
//! The checks are ordinary library functions rather than test-only code:
//! the test suites (and anything else that wants evidence the arithmetic
//! is exact) call [`run_all`] and assert every report passes.

use crate::rng::SplitMix64;
use crate::volume::LabelVolume;

use super::loss::{one_hot, soft_dice_loss};
use super::model::{standalone_residual_unit, NetworkConfig, SegNet};
use super::ops::{
    conv3d_backward, conv3d_forward, instance_norm_backward, instance_norm_forward,
    prelu_backward, prelu_forward, softmax_channels, softmax_channels_backward, ConvSpec,
};
use super::tensor::Tensor5;

/// Maximum admissible relative error between analytic and numeric
/// gradients.
pub const FD_TOLERANCE: f64 = 1e-4;

const FD_H_SCALE: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    /// Worst relative disagreement across all coordinates checked.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub comparisons: usize,
}

impl CheckReport {
    pub fn passes(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < FD_TOLERANCE
    }
}

/// Relative disagreement with a unit floor, so near-zero gradients are
/// compared absolutely instead of amplifying roundoff.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn probe_dot(probe: &Tensor5, t: &Tensor5) -> f64 {
    probe.data.iter().zip(t.data.iter()).map(|(p, v)| p * v).sum()
}

/// Central finite difference of `f` in the perturbed coordinate.
fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    let h = FD_H_SCALE * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

struct Worst {
    max: f64,
    count: usize,
}

impl Worst {
    fn new() -> Self {
        Worst { max: 0.0, count: 0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max = self.max.max(rel_err(analytic, numeric));
        self.count += 1;
    }
}

/// Convolution: checks input, weight, and bias gradients for 3×3×3
/// kernels at strides 1 and 2 and the 1×1×1 head kernel.
pub fn check_conv3d(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let mut worst = Worst::new();

    for (kernel, stride) in [(3, 1), (3, 2), (1, 1)] {
        let spec = ConvSpec { out_channels: 3, in_channels: 2, kernel, stride };
        let input = Tensor5::random_uniform([1, 2, 4, 4, 4], 1.0, &mut rng);
        let mut weights = Vec::with_capacity(spec.weight_len());
        for _ in 0..spec.weight_len() {
            weights.push(2.0 * rng.next_f64() - 1.0);
        }
        let mut bias = vec![0.0; spec.bias_len()];
        for b in &mut bias {
            *b = 2.0 * rng.next_f64() - 1.0;
        }
        let out = conv3d_forward(&input, &spec, &weights, &bias).expect("valid case");
        let probe = Tensor5::random_uniform(out.dims, 1.0, &mut rng);

        let mut gw = vec![0.0; weights.len()];
        let mut gb = vec![0.0; bias.len()];
        let gin = conv3d_backward(&input, &spec, &weights, &probe, &mut gw, &mut gb)
            .expect("valid case");

        let mut x = input.clone();
        for i in 0..x.len() {
            let orig = x.data[i];
            let fd = central(orig, |v| {
                x.data[i] = v;
                probe_dot(&probe, &conv3d_forward(&x, &spec, &weights, &bias).unwrap())
            });
            x.data[i] = orig;
            worst.record(gin.data[i], fd);
        }
        let mut w = weights.clone();
        for i in 0..w.len() {
            let orig = w[i];
            let fd = central(orig, |v| {
                w[i] = v;
                probe_dot(&probe, &conv3d_forward(&input, &spec, &w, &bias).unwrap())
            });
            w[i] = orig;
            worst.record(gw[i], fd);
        }
        let mut bb = bias.clone();
        for i in 0..bb.len() {
            let orig = bb[i];
            let fd = central(orig, |v| {
                bb[i] = v;
                probe_dot(&probe, &conv3d_forward(&input, &spec, &weights, &bb).unwrap())
            });
            bb[i] = orig;
            worst.record(gb[i], fd);
        }
    }
    CheckReport { name: "conv3d", max_rel_err: worst.max, comparisons: worst.count }
}

/// PReLU: checks input and per-channel slope gradients. Inputs are nudged
/// away from the kink at zero, where the derivative is not defined.
pub fn check_prelu(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let mut input = Tensor5::random_uniform([1, 2, 4, 4, 4], 1.0, &mut rng);
    for v in &mut input.data {
        if v.abs() < 0.05 {
            *v += 0.1 * v.signum();
        }
    }
    let slopes = [0.25, -0.3];
    let out = prelu_forward(&input, &slopes).expect("valid case");
    let probe = Tensor5::random_uniform(out.dims, 1.0, &mut rng);

    let mut gs = vec![0.0; slopes.len()];
    let gin = prelu_backward(&input, &slopes, &probe, &mut gs).expect("valid case");

    let mut worst = Worst::new();
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data[i];
        let fd = central(orig, |v| {
            x.data[i] = v;
            probe_dot(&probe, &prelu_forward(&x, &slopes).unwrap())
        });
        x.data[i] = orig;
        worst.record(gin.data[i], fd);
    }
    let mut s = slopes;
    for i in 0..s.len() {
        let orig = s[i];
        let fd = central(orig, |v| {
            s[i] = v;
            probe_dot(&probe, &prelu_forward(&input, &s).unwrap())
        });
        s[i] = orig;
        worst.record(gs[i], fd);
    }
    CheckReport { name: "prelu", max_rel_err: worst.max, comparisons: worst.count }
}

/// Instance normalization: checks input, scale, and shift gradients —
/// the statistics terms make this the least trivial backward.
pub fn check_instance_norm(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let input = Tensor5::random_uniform([1, 2, 4, 4, 4], 2.0, &mut rng);
    let scale = [0.5 + rng.next_f64(), 0.5 + rng.next_f64()];
    let shift = [rng.next_f64() - 0.5, rng.next_f64() - 0.5];
    let eps = 1e-5;

    let (out, cache) = instance_norm_forward(&input, &scale, &shift, eps).expect("valid case");
    let probe = Tensor5::random_uniform(out.dims, 1.0, &mut rng);

    let mut gsc = vec![0.0; 2];
    let mut gsh = vec![0.0; 2];
    let gin = instance_norm_backward(&cache, &scale, &probe, &mut gsc, &mut gsh)
        .expect("valid case");

    let eval = |input: &Tensor5, scale: &[f64], shift: &[f64], probe: &Tensor5| {
        let (out, _) = instance_norm_forward(input, scale, shift, eps).unwrap();
        probe_dot(probe, &out)
    };

    let mut worst = Worst::new();
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data[i];
        let fd = central(orig, |v| {
            x.data[i] = v;
            eval(&x, &scale, &shift, &probe)
        });
        x.data[i] = orig;
        worst.record(gin.data[i], fd);
    }
    let mut sc = scale;
    for i in 0..2 {
        let orig = sc[i];
        let fd = central(orig, |v| {
            sc[i] = v;
            eval(&input, &sc, &shift, &probe)
        });
        sc[i] = orig;
        worst.record(gsc[i], fd);
    }
    let mut sh = shift;
    for i in 0..2 {
        let orig = sh[i];
        let fd = central(orig, |v| {
            sh[i] = v;
            eval(&input, &scale, &sh, &probe)
        });
        sh[i] = orig;
        worst.record(gsh[i], fd);
    }
    CheckReport { name: "instance_norm", max_rel_err: worst.max, comparisons: worst.count }
}

/// The composite on top of the logits: softmax followed by the soft Dice
/// loss. Checks the chained gradient (softmax Jacobian applied to the
/// loss gradient) against differences of the scalar loss itself.
pub fn check_softmax_dice(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let logits = Tensor5::random_uniform([1, 3, 2, 2, 2], 1.5, &mut rng);
    let labels: Vec<u8> = (0..8).map(|_| rng.next_index(3) as u8).collect();
    let target = one_hot(
        &LabelVolume::new([2, 2, 2], [1.0, 1.0, 1.0], labels).expect("valid labels"),
    );

    let loss_of = |logits: &Tensor5| {
        let probs = softmax_channels(logits);
        soft_dice_loss(&probs, &target, 1.0).unwrap().0
    };

    let probs = softmax_channels(&logits);
    let (_, dprobs) = soft_dice_loss(&probs, &target, 1.0).expect("valid case");
    let dlogits = softmax_channels_backward(&probs, &dprobs);

    let mut worst = Worst::new();
    let mut x = logits.clone();
    for i in 0..x.len() {
        let orig = x.data[i];
        let fd = central(orig, |v| {
            x.data[i] = v;
            loss_of(&x)
        });
        x.data[i] = orig;
        worst.record(dlogits.data[i], fd);
    }
    CheckReport { name: "softmax+dice", max_rel_err: worst.max, comparisons: worst.count }
}

/// One residual unit, both in its projecting form (stride 2, widening)
/// and its identity-skip form (stride 1, equal width): checks input and
/// every parameter coordinate.
pub fn check_residual_unit(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let mut worst = Worst::new();

    for (in_ch, out_ch, stride) in [(1usize, 2usize, 2usize), (2, 2, 1)] {
        let (unit, params) = standalone_residual_unit(in_ch, out_ch, stride, seed ^ 0xA5);
        let input = Tensor5::random_uniform([1, in_ch, 4, 4, 4], 1.0, &mut rng);
        let (out, cache) = unit.forward(&params, &input).expect("valid case");
        let probe = Tensor5::random_uniform(out.dims, 1.0, &mut rng);

        let mut grads = vec![0.0; params.len()];
        let gin = unit.backward(&params, &cache, &probe, &mut grads).expect("valid case");

        let mut x = input.clone();
        for i in 0..x.len() {
            let orig = x.data[i];
            let fd = central(orig, |v| {
                x.data[i] = v;
                probe_dot(&probe, &unit.forward(&params, &x).unwrap().0)
            });
            x.data[i] = orig;
            worst.record(gin.data[i], fd);
        }
        let mut p = params.clone();
        for i in 0..p.len() {
            let orig = p[i];
            let fd = central(orig, |v| {
                p[i] = v;
                probe_dot(&probe, &unit.forward(&p, &input).unwrap().0)
            });
            p[i] = orig;
            worst.record(grads[i], fd);
        }
    }
    CheckReport { name: "residual_unit", max_rel_err: worst.max, comparisons: worst.count }
}

/// The full network at miniature width (2, 3, 4 channels): every one of
/// its parameters and every input voxel, through encoder, decoders, and
/// head at once.
pub fn check_full_model(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let config = NetworkConfig { channels: vec![2, 3, 4], ..NetworkConfig::default() };
    let mut model = SegNet::new(config, seed ^ 0x5A).expect("valid config");
    let input = Tensor5::random_uniform([1, 1, 8, 8, 4], 1.0, &mut rng);

    let cache = model.forward(&input).expect("valid case");
    let probe = Tensor5::random_uniform(cache.logits.dims, 1.0, &mut rng);
    let mut grads = vec![0.0; model.parameter_count()];
    let gin = model.backward(&cache, &probe, &mut grads).expect("valid case");

    let mut worst = Worst::new();
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data[i];
        let fd = central(orig, |v| {
            x.data[i] = v;
            probe_dot(&probe, &model.forward(&x).unwrap().logits)
        });
        x.data[i] = orig;
        worst.record(gin.data[i], fd);
    }
    for i in 0..model.parameter_count() {
        let orig = model.parameters()[i];
        let fd = central(orig, |v| {
            model.parameters_mut()[i] = v;
            probe_dot(&probe, &model.forward(&input).unwrap().logits)
        });
        model.parameters_mut()[i] = orig;
        worst.record(grads[i], fd);
    }
    CheckReport { name: "full_model", max_rel_err: worst.max, comparisons: worst.count }
}

/// Run every gradient check with seeds derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    vec![
        check_conv3d(SplitMix64::derive_seed(seed, 1)),
        check_prelu(SplitMix64::derive_seed(seed, 2)),
        check_instance_norm(SplitMix64::derive_seed(seed, 3)),
        check_softmax_dice(SplitMix64::derive_seed(seed, 4)),
        check_residual_unit(SplitMix64::derive_seed(seed, 5)),
        check_full_model(SplitMix64::derive_seed(seed, 6)),
    ]
}
