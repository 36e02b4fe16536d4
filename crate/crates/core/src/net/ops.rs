//! Differentiable primitives: 3D convolution, PReLU, instance
//! normalization, channel softmax, and nearest-neighbour upsampling.
//!
//! Each primitive is a forward function plus an explicit backward that
//! returns (or accumulates) exact gradients of the forward map. There is
//! no tape: the layer structs in `model` wire caches through by hand,
//! which keeps every gradient inspectable and finite-difference-checkable
//! in isolation.
//!
//! Convolution is cross-correlation with zero "same" padding: output
//! spatial extent is `ceil(n / stride)` and the pad split puts the extra
//! cell at the high end, the convention shared by the major frameworks.

use thiserror::Error;

use super::tensor::{Tensor5, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("conv weights: expected {expected} values for {out_c}x{in_c}x{k}^3, got {got}")]
    BadWeightLength {
        out_c: usize,
        in_c: usize,
        k: usize,
        expected: usize,
        got: usize,
    },
    #[error("input has {got} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("parameter vector length {got}, expected {expected}")]
    BadParamLength { expected: usize, got: usize },
    #[error("spatial extents {extents:?} are not divisible by the stride product {product}")]
    IndivisibleInput { extents: [usize; 3], product: usize },
    #[error("invalid network configuration: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at epoch {epoch} (value {value})")]
    NonFiniteLoss { epoch: usize, value: f64 },
}

/// Static geometry of one convolution: kernel is cubic (3 for the body,
/// 1 for projections and the head), stride applies to all three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel * self.kernel
    }

    pub fn bias_len(&self) -> usize {
        self.out_channels
    }

    /// Low-side padding for "same" output geometry.
    fn pad_lo(&self, n: usize) -> isize {
        // total = max((out-1)*s + k - n, 0), low half rounded down
        let out = self.out_extent(n);
        let total = ((out - 1) * self.stride + self.kernel).saturating_sub(n);
        (total / 2) as isize
    }

    pub fn out_extent(&self, n: usize) -> usize {
        n.div_ceil(self.stride)
    }

    fn check(&self, input: &Tensor5, weights: &[f64], bias: &[f64]) -> Result<(), NetError> {
        if input.channels() != self.in_channels {
            return Err(NetError::ChannelMismatch {
                expected: self.in_channels,
                got: input.channels(),
            });
        }
        if weights.len() != self.weight_len() {
            return Err(NetError::BadWeightLength {
                out_c: self.out_channels,
                in_c: self.in_channels,
                k: self.kernel,
                expected: self.weight_len(),
                got: weights.len(),
            });
        }
        if bias.len() != self.bias_len() {
            return Err(NetError::BadParamLength {
                expected: self.bias_len(),
                got: bias.len(),
            });
        }
        Ok(())
    }
}

/// Cross-correlate `input` with `weights` (layout `(out_c, in_c, kx, ky,
/// kz)`, z fastest) and add per-channel bias.
pub fn conv3d_forward(
    input: &Tensor5,
    spec: &ConvSpec,
    weights: &[f64],
    bias: &[f64],
) -> Result<Tensor5, NetError> {
    spec.check(input, weights, bias)?;
    let [nx, ny, nz] = input.spatial();
    let (ox, oy, oz) = (spec.out_extent(nx), spec.out_extent(ny), spec.out_extent(nz));
    let (px, py, pz) = (spec.pad_lo(nx), spec.pad_lo(ny), spec.pad_lo(nz));
    let k = spec.kernel;
    let s = spec.stride;
    let mut out = Tensor5::zeros([input.batch(), spec.out_channels, ox, oy, oz]);

    let in_cstride = nx * ny * nz;
    for b in 0..input.batch() {
        for oc in 0..spec.out_channels {
            let w_oc = &weights[oc * spec.in_channels * k * k * k..];
            let mut oi = out.index(b, oc, 0, 0, 0);
            for x in 0..ox {
                let ix0 = (x * s) as isize - px;
                for y in 0..oy {
                    let iy0 = (y * s) as isize - py;
                    for z in 0..oz {
                        let iz0 = (z * s) as isize - pz;
                        let mut acc = bias[oc];
                        for ic in 0..spec.in_channels {
                            let in_base = (b * spec.in_channels + ic) * in_cstride;
                            let w_ic = &w_oc[ic * k * k * k..];
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix as usize >= nx {
                                    continue;
                                }
                                for ky in 0..k {
                                    let iy = iy0 + ky as isize;
                                    if iy < 0 || iy as usize >= ny {
                                        continue;
                                    }
                                    let row =
                                        in_base + (ix as usize * ny + iy as usize) * nz;
                                    let w_row = &w_ic[(kx * k + ky) * k..];
                                    for kz in 0..k {
                                        let iz = iz0 + kz as isize;
                                        if iz < 0 || iz as usize >= nz {
                                            continue;
                                        }
                                        acc += input.data[row + iz as usize] * w_row[kz];
                                    }
                                }
                            }
                        }
                        out.data[oi] = acc;
                        oi += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv3d_forward`]: returns the input gradient and
/// accumulates (`+=`) weight and bias gradients, so one backward pass can
/// sum over layers reusing a parameter buffer.
pub fn conv3d_backward(
    input: &Tensor5,
    spec: &ConvSpec,
    weights: &[f64],
    grad_out: &Tensor5,
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor5, NetError> {
    spec.check(input, weights, grad_bias)?;
    if grad_weights.len() != spec.weight_len() {
        return Err(NetError::BadParamLength {
            expected: spec.weight_len(),
            got: grad_weights.len(),
        });
    }
    let [nx, ny, nz] = input.spatial();
    let (ox, oy, oz) = (spec.out_extent(nx), spec.out_extent(ny), spec.out_extent(nz));
    debug_assert_eq!(grad_out.spatial(), [ox, oy, oz]);
    let (px, py, pz) = (spec.pad_lo(nx), spec.pad_lo(ny), spec.pad_lo(nz));
    let k = spec.kernel;
    let s = spec.stride;
    let mut grad_in = Tensor5::zeros(input.dims);

    let in_cstride = nx * ny * nz;
    for b in 0..input.batch() {
        for oc in 0..spec.out_channels {
            let w_oc = &weights[oc * spec.in_channels * k * k * k..];
            let gw_oc = oc * spec.in_channels * k * k * k;
            let mut gi = grad_out.index(b, oc, 0, 0, 0);
            for x in 0..ox {
                let ix0 = (x * s) as isize - px;
                for y in 0..oy {
                    let iy0 = (y * s) as isize - py;
                    for z in 0..oz {
                        let iz0 = (z * s) as isize - pz;
                        let g = grad_out.data[gi];
                        gi += 1;
                        if g == 0.0 {
                            continue;
                        }
                        grad_bias[oc] += g;
                        for ic in 0..spec.in_channels {
                            let in_base = (b * spec.in_channels + ic) * in_cstride;
                            let w_ic = &w_oc[ic * k * k * k..];
                            let gw_ic = gw_oc + ic * k * k * k;
                            for kx in 0..k {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix as usize >= nx {
                                    continue;
                                }
                                for ky in 0..k {
                                    let iy = iy0 + ky as isize;
                                    if iy < 0 || iy as usize >= ny {
                                        continue;
                                    }
                                    let row =
                                        in_base + (ix as usize * ny + iy as usize) * nz;
                                    let w_row = &w_ic[(kx * k + ky) * k..];
                                    let gw_row = gw_ic + (kx * k + ky) * k;
                                    for kz in 0..k {
                                        let iz = iz0 + kz as isize;
                                        if iz < 0 || iz as usize >= nz {
                                            continue;
                                        }
                                        let ii = row + iz as usize;
                                        grad_in.data[ii] += g * w_row[kz];
                                        grad_weights[gw_row + kz] += g * input.data[ii];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Leaky rectifier with one learnable negative-side slope per channel:
/// `f(x) = x` for `x >= 0`, `a_c * x` otherwise. A slope of zero recovers
/// plain ReLU.
pub fn prelu_forward(input: &Tensor5, slopes: &[f64]) -> Result<Tensor5, NetError> {
    if slopes.len() != input.channels() {
        return Err(NetError::BadParamLength {
            expected: input.channels(),
            got: slopes.len(),
        });
    }
    let mut out = input.clone();
    let voxels = input.dims[2] * input.dims[3] * input.dims[4];
    for b in 0..input.batch() {
        for c in 0..input.channels() {
            let a = slopes[c];
            let base = (b * input.channels() + c) * voxels;
            for v in &mut out.data[base..base + voxels] {
                if *v < 0.0 {
                    *v *= a;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`prelu_forward`]: input gradient returned, slope
/// gradients accumulated (`dL/da_c = Σ_{x<0} x·g`). Derivative at exactly
/// zero takes the non-negative branch (slope 1).
pub fn prelu_backward(
    input: &Tensor5,
    slopes: &[f64],
    grad_out: &Tensor5,
    grad_slopes: &mut [f64],
) -> Result<Tensor5, NetError> {
    input.same_shape(grad_out)?;
    if slopes.len() != input.channels() || grad_slopes.len() != slopes.len() {
        return Err(NetError::BadParamLength {
            expected: input.channels(),
            got: slopes.len().min(grad_slopes.len()),
        });
    }
    let mut grad_in = Tensor5::zeros(input.dims);
    let voxels = input.dims[2] * input.dims[3] * input.dims[4];
    for b in 0..input.batch() {
        for c in 0..input.channels() {
            let a = slopes[c];
            let base = (b * input.channels() + c) * voxels;
            let mut ga = 0.0;
            for i in base..base + voxels {
                let x = input.data[i];
                let g = grad_out.data[i];
                if x < 0.0 {
                    grad_in.data[i] = g * a;
                    ga += x * g;
                } else {
                    grad_in.data[i] = g;
                }
            }
            grad_slopes[c] += ga;
        }
    }
    Ok(grad_in)
}

/// Per-(instance, channel) statistics cached by the forward pass for an
/// exact backward.
#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    /// `(x - mean) * inv_std`, before the affine.
    pub normalized: Tensor5,
    /// One per (batch, channel) pair, batch-major.
    pub inv_std: Vec<f64>,
}

/// Normalize each (instance, channel) slice to mean 0 / variance 1
/// (population variance, stabilized by `epsilon`), then apply a learnable
/// per-channel affine. This is exactly what batch normalization computes
/// at batch size one, which is how this network always runs; no running
/// statistics exist.
pub fn instance_norm_forward(
    input: &Tensor5,
    scale: &[f64],
    shift: &[f64],
    epsilon: f64,
) -> Result<(Tensor5, InstanceNormCache), NetError> {
    let ch = input.channels();
    if scale.len() != ch || shift.len() != ch {
        return Err(NetError::BadParamLength {
            expected: ch,
            got: scale.len().min(shift.len()),
        });
    }
    let voxels = input.dims[2] * input.dims[3] * input.dims[4];
    let mut normalized = Tensor5::zeros(input.dims);
    let mut out = Tensor5::zeros(input.dims);
    let mut inv_std = Vec::with_capacity(input.batch() * ch);
    for b in 0..input.batch() {
        for c in 0..ch {
            let base = (b * ch + c) * voxels;
            let slice = &input.data[base..base + voxels];
            let n = voxels as f64;
            let mean = slice.iter().sum::<f64>() / n;
            let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + epsilon).sqrt();
            inv_std.push(inv);
            for (i, &v) in slice.iter().enumerate() {
                let xhat = (v - mean) * inv;
                normalized.data[base + i] = xhat;
                out.data[base + i] = scale[c] * xhat + shift[c];
            }
        }
    }
    Ok((out, InstanceNormCache { normalized, inv_std }))
}

/// Exact backward through the normalization statistics:
/// `dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat ⊙ xhat))`
/// with `dxhat = g * scale_c`; scale/shift gradients accumulated.
pub fn instance_norm_backward(
    cache: &InstanceNormCache,
    scale: &[f64],
    grad_out: &Tensor5,
    grad_scale: &mut [f64],
    grad_shift: &mut [f64],
) -> Result<Tensor5, NetError> {
    let xhat = &cache.normalized;
    xhat.same_shape(grad_out)?;
    let ch = xhat.channels();
    if scale.len() != ch || grad_scale.len() != ch || grad_shift.len() != ch {
        return Err(NetError::BadParamLength { expected: ch, got: scale.len() });
    }
    let voxels = xhat.dims[2] * xhat.dims[3] * xhat.dims[4];
    let n = voxels as f64;
    let mut grad_in = Tensor5::zeros(xhat.dims);
    for b in 0..xhat.batch() {
        for c in 0..ch {
            let base = (b * ch + c) * voxels;
            let inv = cache.inv_std[b * ch + c];
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in base..base + voxels {
                let g = grad_out.data[i];
                sum_g += g;
                sum_gx += g * xhat.data[i];
            }
            grad_shift[c] += sum_g;
            grad_scale[c] += sum_gx;
            let mean_dxhat = scale[c] * sum_g / n;
            let mean_dxhat_xhat = scale[c] * sum_gx / n;
            for i in base..base + voxels {
                let dxhat = grad_out.data[i] * scale[c];
                grad_in.data[i] =
                    inv * (dxhat - mean_dxhat - xhat.data[i] * mean_dxhat_xhat);
            }
        }
    }
    Ok(grad_in)
}

/// Per-voxel softmax across the channel axis, stabilized by subtracting
/// the per-voxel maximum so huge logits cannot overflow.
pub fn softmax_channels(input: &Tensor5) -> Tensor5 {
    let ch = input.channels();
    let voxels = input.dims[2] * input.dims[3] * input.dims[4];
    let mut out = Tensor5::zeros(input.dims);
    for b in 0..input.batch() {
        let base = b * ch * voxels;
        for v in 0..voxels {
            let mut max = f64::NEG_INFINITY;
            for c in 0..ch {
                max = max.max(input.data[base + c * voxels + v]);
            }
            let mut sum = 0.0;
            for c in 0..ch {
                let e = (input.data[base + c * voxels + v] - max).exp();
                out.data[base + c * voxels + v] = e;
                sum += e;
            }
            for c in 0..ch {
                out.data[base + c * voxels + v] /= sum;
            }
        }
    }
    out
}

/// Jacobian-vector product of the channel softmax:
/// `dx_c = p_c * (g_c - Σ_j p_j g_j)` per voxel.
pub fn softmax_channels_backward(probs: &Tensor5, grad_out: &Tensor5) -> Tensor5 {
    let ch = probs.channels();
    let voxels = probs.dims[2] * probs.dims[3] * probs.dims[4];
    let mut grad_in = Tensor5::zeros(probs.dims);
    for b in 0..probs.batch() {
        let base = b * ch * voxels;
        for v in 0..voxels {
            let mut dot = 0.0;
            for c in 0..ch {
                let i = base + c * voxels + v;
                dot += probs.data[i] * grad_out.data[i];
            }
            for c in 0..ch {
                let i = base + c * voxels + v;
                grad_in.data[i] = probs.data[i] * (grad_out.data[i] - dot);
            }
        }
    }
    grad_in
}

/// Nearest-neighbour upsampling by an integer factor on all spatial axes:
/// `out[x,y,z] = in[x/f, y/f, z/f]`.
pub fn upsample_nearest(input: &Tensor5, factor: usize) -> Tensor5 {
    let [nx, ny, nz] = input.spatial();
    let dims = [input.dims[0], input.dims[1], nx * factor, ny * factor, nz * factor];
    let mut out = Tensor5::zeros(dims);
    for b in 0..dims[0] {
        for c in 0..dims[1] {
            for x in 0..dims[2] {
                for y in 0..dims[3] {
                    let src_row = input.index(b, c, x / factor, y / factor, 0);
                    let dst_row = out.index(b, c, x, y, 0);
                    for z in 0..dims[4] {
                        out.data[dst_row + z] = input.data[src_row + z / factor];
                    }
                }
            }
        }
    }
    out
}

/// Backward of nearest upsampling: each input cell receives the sum of
/// the gradients of the `factor³` outputs it fed.
pub fn upsample_nearest_backward(grad_out: &Tensor5, factor: usize) -> Tensor5 {
    let dims = [
        grad_out.dims[0],
        grad_out.dims[1],
        grad_out.dims[2] / factor,
        grad_out.dims[3] / factor,
        grad_out.dims[4] / factor,
    ];
    let mut grad_in = Tensor5::zeros(dims);
    for b in 0..grad_out.dims[0] {
        for c in 0..grad_out.dims[1] {
            for x in 0..grad_out.dims[2] {
                for y in 0..grad_out.dims[3] {
                    let dst_row = grad_in.index(b, c, x / factor, y / factor, 0);
                    let src_row = grad_out.index(b, c, x, y, 0);
                    for z in 0..grad_out.dims[4] {
                        grad_in.data[dst_row + z / factor] += grad_out.data[src_row + z];
                    }
                }
            }
        }
    }
    grad_in
}
