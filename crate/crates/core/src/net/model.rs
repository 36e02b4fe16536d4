//! The segmentation network: a residual encoder–decoder over 3D patches.
//!
//! Encoding path: one residual unit per level, each down-sampling by its
//! level stride (default two stride-2 levels: 1→8→16 channels), then a
//! stride-1 residual unit at the bottom (16→32). Decoding path mirrors it
//! with concatenation skips: concatenate the encoder feature with the
//! deeper feature, nearest-upsample, then conv → norm → PReLU. A final
//! 1×1×1 convolution maps to the three class logits.
//!
//! All parameters live in one flat arena with named views, which makes
//! the optimizer an elementwise update, checkpointing a dump of named
//! slices, and gradient accumulation a single `+=` buffer.

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

use super::ops::{
    conv3d_backward, conv3d_forward, instance_norm_backward, instance_norm_forward,
    prelu_backward, prelu_forward, upsample_nearest, upsample_nearest_backward, ConvSpec,
    InstanceNormCache, NetError,
};
use super::tensor::Tensor5;

pub const DEFAULT_CHANNELS: [usize; 3] = [8, 16, 32];
pub const DEFAULT_STRIDES: [usize; 2] = [2, 2];
pub const NORM_EPSILON: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

/// Network shape hyperparameters. `channels` has one entry per level
/// (the last being the bottom), `strides` one entry per down-sampling
/// level, so `strides.len() == channels.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub class_count: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub units_per_level: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 1,
            class_count: 3,
            channels: DEFAULT_CHANNELS.to_vec(),
            strides: DEFAULT_STRIDES.to_vec(),
            units_per_level: 1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.class_count != 3 {
            return Err(NetError::BadConfig(format!(
                "class_count must be 3, got {}",
                self.class_count
            )));
        }
        if self.in_channels == 0 {
            return Err(NetError::BadConfig("in_channels must be positive".into()));
        }
        if self.channels.len() < 2 {
            return Err(NetError::BadConfig(format!(
                "need at least 2 levels, got {}",
                self.channels.len()
            )));
        }
        if self.strides.len() + 1 != self.channels.len() {
            return Err(NetError::BadConfig(format!(
                "{} channel levels require {} strides, got {}",
                self.channels.len(),
                self.channels.len() - 1,
                self.strides.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(NetError::BadConfig("channel widths must be positive".into()));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(NetError::BadConfig("strides must be positive".into()));
        }
        if self.units_per_level == 0 {
            return Err(NetError::BadConfig("units_per_level must be positive".into()));
        }
        Ok(())
    }

    /// Every input extent must be divisible by this.
    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }
}

/// Descriptor of one named parameter tensor inside the flat arena.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct PRange {
    offset: usize,
    len: usize,
}

impl PRange {
    fn of<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.offset..self.offset + self.len]
    }

    fn of_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.offset..self.offset + self.len]
    }
}

/// Two disjoint mutable views into the gradient buffer. Allocation order
/// guarantees `a` precedes `b`.
fn two_mut(buf: &mut [f64], a: PRange, b: PRange) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.offset + a.len <= b.offset);
    let (lo, hi) = buf.split_at_mut(b.offset);
    (&mut lo[a.offset..a.offset + a.len], &mut hi[..b.len])
}

enum Init {
    Zero,
    One,
    Const(f64),
    /// Uniform in ±sqrt(1/fan_in).
    FanIn(usize),
}

struct Builder {
    meta: Vec<ParamTensor>,
    values: Vec<f64>,
    rng: SplitMix64,
}

impl Builder {
    fn alloc(&mut self, name: String, dims: Vec<usize>, init: Init) -> PRange {
        let len = dims.iter().product();
        let offset = self.values.len();
        match init {
            Init::Zero => self.values.extend(std::iter::repeat_n(0.0, len)),
            Init::One => self.values.extend(std::iter::repeat_n(1.0, len)),
            Init::Const(c) => self.values.extend(std::iter::repeat_n(c, len)),
            Init::FanIn(fan_in) => {
                let bound = (1.0 / fan_in as f64).sqrt();
                for _ in 0..len {
                    self.values.push((2.0 * self.rng.next_f64() - 1.0) * bound);
                }
            }
        }
        self.meta.push(ParamTensor { name, dims, offset, len });
        PRange { offset, len }
    }

    fn conv(&mut self, name: &str, spec: ConvSpec) -> ConvLayer {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel * spec.kernel;
        let weight = self.alloc(
            format!("{name}.weight"),
            vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel, spec.kernel],
            Init::FanIn(fan_in),
        );
        let bias = self.alloc(format!("{name}.bias"), vec![spec.out_channels], Init::Zero);
        ConvLayer { spec, weight, bias }
    }

    fn norm(&mut self, name: &str, channels: usize) -> NormLayer {
        NormLayer {
            scale: self.alloc(format!("{name}.scale"), vec![channels], Init::One),
            shift: self.alloc(format!("{name}.shift"), vec![channels], Init::Zero),
        }
    }

    fn act(&mut self, name: &str, channels: usize) -> ActLayer {
        ActLayer {
            slopes: self.alloc(
                format!("{name}.slope"),
                vec![channels],
                Init::Const(PRELU_INIT),
            ),
        }
    }

    fn residual_unit(&mut self, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> ResidualUnit {
        let conv_a = self.conv(
            &format!("{name}.conv_a"),
            ConvSpec { out_channels: out_ch, in_channels: in_ch, kernel: 3, stride },
        );
        let norm_a = self.norm(&format!("{name}.norm_a"), out_ch);
        let act_a = self.act(&format!("{name}.act_a"), out_ch);
        let conv_b = self.conv(
            &format!("{name}.conv_b"),
            ConvSpec { out_channels: out_ch, in_channels: out_ch, kernel: 3, stride: 1 },
        );
        let norm_b = self.norm(&format!("{name}.norm_b"), out_ch);
        let skip = if in_ch != out_ch || stride != 1 {
            Some(self.conv(
                &format!("{name}.skip"),
                ConvSpec { out_channels: out_ch, in_channels: in_ch, kernel: 1, stride },
            ))
        } else {
            None
        };
        ResidualUnit { conv_a, norm_a, act_a, conv_b, norm_b, skip }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    weight: PRange,
    bias: PRange,
}

impl ConvLayer {
    fn forward(&self, p: &[f64], x: &Tensor5) -> Result<Tensor5, NetError> {
        conv3d_forward(x, &self.spec, self.weight.of(p), self.bias.of(p))
    }

    fn backward(
        &self,
        p: &[f64],
        input: &Tensor5,
        grad_out: &Tensor5,
        grads: &mut [f64],
    ) -> Result<Tensor5, NetError> {
        let (gw, gb) = two_mut(grads, self.weight, self.bias);
        conv3d_backward(input, &self.spec, self.weight.of(p), grad_out, gw, gb)
    }
}

#[derive(Debug, Clone)]
struct NormLayer {
    scale: PRange,
    shift: PRange,
}

impl NormLayer {
    fn forward(&self, p: &[f64], x: &Tensor5) -> Result<(Tensor5, InstanceNormCache), NetError> {
        instance_norm_forward(x, self.scale.of(p), self.shift.of(p), NORM_EPSILON)
    }

    fn backward(
        &self,
        p: &[f64],
        cache: &InstanceNormCache,
        grad_out: &Tensor5,
        grads: &mut [f64],
    ) -> Result<Tensor5, NetError> {
        let (gs, gh) = two_mut(grads, self.scale, self.shift);
        instance_norm_backward(cache, self.scale.of(p), grad_out, gs, gh)
    }
}

#[derive(Debug, Clone)]
struct ActLayer {
    slopes: PRange,
}

impl ActLayer {
    fn forward(&self, p: &[f64], x: &Tensor5) -> Result<Tensor5, NetError> {
        prelu_forward(x, self.slopes.of(p))
    }

    fn backward(
        &self,
        p: &[f64],
        input: &Tensor5,
        grad_out: &Tensor5,
        grads: &mut [f64],
    ) -> Result<Tensor5, NetError> {
        prelu_backward(input, self.slopes.of(p), grad_out, self.slopes.of_mut(grads))
    }
}

/// conv(stride s) → norm → PReLU → conv(stride 1) → norm, summed with the
/// identity (or a 1×1×1 stride-s projection when shape or width changes).
/// No activation after the sum.
#[derive(Debug, Clone)]
pub(crate) struct ResidualUnit {
    conv_a: ConvLayer,
    norm_a: NormLayer,
    act_a: ActLayer,
    conv_b: ConvLayer,
    norm_b: NormLayer,
    skip: Option<ConvLayer>,
}

pub(crate) struct ResUnitCache {
    input: Tensor5,
    norm_a: InstanceNormCache,
    /// Input of the activation (= normalized conv_a output).
    act_a_in: Tensor5,
    /// Input of the second convolution (= activation output).
    conv_b_in: Tensor5,
    norm_b: InstanceNormCache,
}

impl ResidualUnit {
    pub(crate) fn forward(
        &self,
        p: &[f64],
        x: &Tensor5,
    ) -> Result<(Tensor5, ResUnitCache), NetError> {
        let a = self.conv_a.forward(p, x)?;
        let (na, cache_a) = self.norm_a.forward(p, &a)?;
        let pa = self.act_a.forward(p, &na)?;
        let b = self.conv_b.forward(p, &pa)?;
        let (nb, cache_b) = self.norm_b.forward(p, &b)?;
        let skip_out = match &self.skip {
            Some(proj) => proj.forward(p, x)?,
            None => x.clone(),
        };
        nb.same_shape(&skip_out)?;
        let mut out = nb;
        for (o, s) in out.data.iter_mut().zip(skip_out.data.iter()) {
            *o += s;
        }
        Ok((
            out,
            ResUnitCache {
                input: x.clone(),
                norm_a: cache_a,
                act_a_in: na,
                conv_b_in: pa,
                norm_b: cache_b,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        p: &[f64],
        cache: &ResUnitCache,
        grad_out: &Tensor5,
        grads: &mut [f64],
    ) -> Result<Tensor5, NetError> {
        let g_b = self.norm_b.backward(p, &cache.norm_b, grad_out, grads)?;
        let g_pa = self.conv_b.backward(p, &cache.conv_b_in, &g_b, grads)?;
        let g_na = self.act_a.backward(p, &cache.act_a_in, &g_pa, grads)?;
        let g_a = self.norm_a.backward(p, &cache.norm_a, &g_na, grads)?;
        let mut g_in = self.conv_a.backward(p, &cache.input, &g_a, grads)?;
        match &self.skip {
            Some(proj) => {
                let g_skip = proj.backward(p, &cache.input, grad_out, grads)?;
                for (gi, gs) in g_in.data.iter_mut().zip(g_skip.data.iter()) {
                    *gi += gs;
                }
            }
            None => {
                for (gi, gs) in g_in.data.iter_mut().zip(grad_out.data.iter()) {
                    *gi += gs;
                }
            }
        }
        Ok(g_in)
    }
}

/// Build one residual unit with its own private parameter arena — lets
/// the gradient checker exercise the unit in isolation from a network.
pub(crate) fn standalone_residual_unit(
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    seed: u64,
) -> (ResidualUnit, Vec<f64>) {
    let mut b = Builder { meta: Vec::new(), values: Vec::new(), rng: SplitMix64::new(seed) };
    let unit = b.residual_unit("unit", in_ch, out_ch, stride);
    (unit, b.values)
}

/// Decoder block: concatenate the level's encoder feature with the deeper
/// feature, nearest-upsample by the level stride, then conv → norm →
/// PReLU.
#[derive(Debug, Clone)]
struct UpBlock {
    factor: usize,
    skip_channels: usize,
    conv: ConvLayer,
    norm: NormLayer,
    act: ActLayer,
}

struct UpBlockCache {
    /// Upsampled concatenation (= convolution input).
    conv_in: Tensor5,
    norm: InstanceNormCache,
    act_in: Tensor5,
}

impl UpBlock {
    fn forward(
        &self,
        p: &[f64],
        skip: &Tensor5,
        deep: &Tensor5,
    ) -> Result<(Tensor5, UpBlockCache), NetError> {
        let cat = Tensor5::concat_channels(skip, deep)?;
        let up = upsample_nearest(&cat, self.factor);
        let c = self.conv.forward(p, &up)?;
        let (n, cache_n) = self.norm.forward(p, &c)?;
        let out = self.act.forward(p, &n)?;
        Ok((out, UpBlockCache { conv_in: up, norm: cache_n, act_in: n }))
    }

    /// Returns gradients for (encoder feature, deeper feature).
    fn backward(
        &self,
        p: &[f64],
        cache: &UpBlockCache,
        grad_out: &Tensor5,
        grads: &mut [f64],
    ) -> Result<(Tensor5, Tensor5), NetError> {
        let g_n = self.act.backward(p, &cache.act_in, grad_out, grads)?;
        let g_c = self.norm.backward(p, &cache.norm, &g_n, grads)?;
        let g_up = self.conv.backward(p, &cache.conv_in, &g_c, grads)?;
        let g_cat = upsample_nearest_backward(&g_up, self.factor);
        Ok(Tensor5::split_channels(&g_cat, self.skip_channels))
    }
}

/// The assembled network plus its parameter arena.
pub struct SegNet {
    pub config: NetworkConfig,
    params: Vec<f64>,
    meta: Vec<ParamTensor>,
    encoders: Vec<Vec<ResidualUnit>>,
    bottom: ResidualUnit,
    decoders: Vec<UpBlock>,
    head: ConvLayer,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    encoders: Vec<Vec<ResUnitCache>>,
    /// Per-level encoder features (the skip inputs), shallowest first.
    pub encoder_outs: Vec<Tensor5>,
    bottom: ResUnitCache,
    decoders: Vec<UpBlockCache>,
    head_in: Tensor5,
    /// Class logits, before softmax.
    pub logits: Tensor5,
}

impl SegNet {
    /// Build a network with freshly initialized parameters. Convolution
    /// weights are uniform in ±sqrt(1/fan_in) from the given seed, biases
    /// and normalization shifts zero, normalization scales one, PReLU
    /// slopes 0.25.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<SegNet, NetError> {
        config.validate()?;
        let mut b = Builder { meta: Vec::new(), values: Vec::new(), rng: SplitMix64::new(seed) };

        let levels = config.strides.len();
        let mut encoders = Vec::with_capacity(levels);
        let mut in_ch = config.in_channels;
        for (i, (&out_ch, &stride)) in
            config.channels.iter().zip(config.strides.iter()).enumerate()
        {
            let mut units = Vec::with_capacity(config.units_per_level);
            units.push(b.residual_unit(&format!("enc{i}.unit0"), in_ch, out_ch, stride));
            for u in 1..config.units_per_level {
                units.push(b.residual_unit(&format!("enc{i}.unit{u}"), out_ch, out_ch, 1));
            }
            encoders.push(units);
            in_ch = out_ch;
        }
        let bottom_ch = *config.channels.last().unwrap();
        let bottom = b.residual_unit("bottom", in_ch, bottom_ch, 1);

        // deepest decoder first; decoder i consumes encoder i's output
        let mut decoders_rev = Vec::with_capacity(levels);
        let mut deep_ch = bottom_ch;
        for i in (0..levels).rev() {
            let skip_ch = config.channels[i];
            let out_ch = config.channels[i.saturating_sub(1)];
            let block = UpBlock {
                factor: config.strides[i],
                skip_channels: skip_ch,
                conv: b.conv(
                    &format!("dec{i}.conv"),
                    ConvSpec {
                        out_channels: out_ch,
                        in_channels: skip_ch + deep_ch,
                        kernel: 3,
                        stride: 1,
                    },
                ),
                norm: b.norm(&format!("dec{i}.norm"), out_ch),
                act: b.act(&format!("dec{i}.act"), out_ch),
            };
            decoders_rev.push(block);
            deep_ch = out_ch;
        }

        let head = b.conv(
            "head",
            ConvSpec {
                out_channels: config.class_count,
                in_channels: deep_ch,
                kernel: 1,
                stride: 1,
            },
        );

        Ok(SegNet {
            config,
            params: b.values,
            meta: b.meta,
            encoders,
            bottom,
            decoders: decoders_rev,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named views of the parameter arena, in allocation order.
    pub fn parameter_tensors(&self) -> &[ParamTensor] {
        &self.meta
    }

    /// Named slice of the arena (or of any same-length buffer, e.g. the
    /// gradient buffer). `None` if the name is unknown.
    pub fn tensor_values<'a>(&self, buf: &'a [f64], name: &str) -> Option<&'a [f64]> {
        let t = self.meta.iter().find(|t| t.name == name)?;
        Some(&buf[t.offset..t.offset + t.len])
    }

    /// Overwrite one named parameter tensor (used by checkpoint loading).
    pub fn set_tensor_values(&mut self, name: &str, values: &[f64]) -> Result<(), NetError> {
        let t = self
            .meta
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NetError::BadConfig(format!("unknown parameter tensor `{name}`")))?;
        if values.len() != t.len {
            return Err(NetError::BadParamLength { expected: t.len, got: values.len() });
        }
        self.params[t.offset..t.offset + t.len].copy_from_slice(values);
        Ok(())
    }

    fn check_input(&self, x: &Tensor5) -> Result<(), NetError> {
        if x.channels() != self.config.in_channels {
            return Err(NetError::ChannelMismatch {
                expected: self.config.in_channels,
                got: x.channels(),
            });
        }
        let product = self.config.stride_product();
        let extents = x.spatial();
        if extents.iter().any(|&n| n == 0 || n % product != 0) {
            return Err(NetError::IndivisibleInput { extents, product });
        }
        Ok(())
    }

    /// Full forward pass; the cache carries every intermediate needed by
    /// [`SegNet::backward`].
    pub fn forward(&self, input: &Tensor5) -> Result<ForwardCache, NetError> {
        self.check_input(input)?;
        let mut cur = input.clone();
        let mut enc_caches = Vec::with_capacity(self.encoders.len());
        let mut enc_outs = Vec::with_capacity(self.encoders.len());
        for level in &self.encoders {
            let mut level_caches = Vec::with_capacity(level.len());
            for unit in level {
                let (out, cache) = unit.forward(&self.params, &cur)?;
                level_caches.push(cache);
                cur = out;
            }
            enc_caches.push(level_caches);
            enc_outs.push(cur.clone());
        }
        let (mut deep, bottom_cache) = self.bottom.forward(&self.params, &cur)?;

        let mut dec_caches = Vec::with_capacity(self.decoders.len());
        for (block, skip) in self.decoders.iter().zip(enc_outs.iter().rev()) {
            let (out, cache) = block.forward(&self.params, skip, &deep)?;
            dec_caches.push(cache);
            deep = out;
        }
        let logits = self.head.forward(&self.params, &deep)?;
        Ok(ForwardCache {
            encoders: enc_caches,
            encoder_outs: enc_outs,
            bottom: bottom_cache,
            decoders: dec_caches,
            head_in: deep,
            logits,
        })
    }

    /// Propagate a logits gradient back through the whole network,
    /// accumulating into `grads` (same length as the parameter arena).
    /// Returns the gradient with respect to the input tensor.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &Tensor5,
        grads: &mut [f64],
    ) -> Result<Tensor5, NetError> {
        if grads.len() != self.params.len() {
            return Err(NetError::BadParamLength {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut g_deep = self.head.backward(&self.params, &cache.head_in, grad_logits, grads)?;

        // decoder gradients, shallowest block last in `decoders`
        let mut skip_grads: Vec<Option<Tensor5>> = vec![None; self.encoders.len()];
        for (i, (block, dec_cache)) in
            self.decoders.iter().zip(cache.decoders.iter()).enumerate().rev()
        {
            let level = self.encoders.len() - 1 - i;
            let (g_skip, g_deeper) = block.backward(&self.params, dec_cache, &g_deep, grads)?;
            skip_grads[level] = Some(g_skip);
            g_deep = g_deeper;
        }

        let mut g_cur = self.bottom.backward(&self.params, &cache.bottom, &g_deep, grads)?;
        for (level, units) in self.encoders.iter().enumerate().rev() {
            if let Some(gs) = &skip_grads[level] {
                for (a, b) in g_cur.data.iter_mut().zip(gs.data.iter()) {
                    *a += b;
                }
            }
            for (unit, unit_cache) in
                units.iter().zip(cache.encoders[level].iter()).rev()
            {
                g_cur = unit.backward(&self.params, unit_cache, &g_cur, grads)?;
            }
        }
        Ok(g_cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ops::softmax_channels;

    fn tiny_input(seed: u64, dims: [usize; 5]) -> Tensor5 {
        let mut rng = SplitMix64::new(seed);
        Tensor5::random_uniform(dims, 1.0, &mut rng)
    }

    #[test]
    fn default_config_validates() {
        NetworkConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_mismatched_stride_count() {
        let config = NetworkConfig { strides: vec![2], ..NetworkConfig::default() };
        assert!(matches!(config.validate(), Err(NetError::BadConfig(_))));
    }

    #[test]
    fn config_rejects_wrong_class_count() {
        let config = NetworkConfig { class_count: 2, ..NetworkConfig::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn forward_shapes_follow_the_architecture() {
        let net = SegNet::new(NetworkConfig::default(), 1).unwrap();
        let input = tiny_input(2, [1, 1, 8, 8, 4]);
        let cache = net.forward(&input).unwrap();
        assert_eq!(cache.encoder_outs[0].dims, [1, 8, 4, 4, 2]);
        assert_eq!(cache.encoder_outs[1].dims, [1, 16, 2, 2, 1]);
        assert_eq!(cache.logits.dims, [1, 3, 8, 8, 4]);
        assert!(cache.logits.all_finite());
    }

    #[test]
    fn forward_rejects_indivisible_extents() {
        let net = SegNet::new(NetworkConfig::default(), 1).unwrap();
        let input = tiny_input(3, [1, 1, 6, 8, 4]);
        assert!(matches!(
            net.forward(&input),
            Err(NetError::IndivisibleInput { extents: [6, 8, 4], product: 4 })
        ));
    }

    #[test]
    fn parameter_names_are_unique_and_cover_the_arena() {
        let net = SegNet::new(NetworkConfig::default(), 1).unwrap();
        let mut names = std::collections::HashSet::new();
        let mut covered = 0;
        let mut expected_offset = 0;
        for t in net.parameter_tensors() {
            assert!(names.insert(t.name.clone()), "duplicate name {}", t.name);
            assert_eq!(t.offset, expected_offset, "arena gap before {}", t.name);
            assert_eq!(t.len, t.dims.iter().product::<usize>());
            expected_offset += t.len;
            covered += t.len;
        }
        assert_eq!(covered, net.parameter_count());
        // two residual levels + bottom + two decoders + head for the
        // default widths: a five-figure parameter count, far under 100k
        assert!(net.parameter_count() > 50_000 && net.parameter_count() < 100_000);
    }

    #[test]
    fn zeroed_convolutions_reduce_residual_unit_to_its_projection() {
        let mut net = SegNet::new(NetworkConfig::default(), 7).unwrap();
        // zero all conv weights/biases in enc0.unit0 except the skip projection
        let names: Vec<String> = net
            .parameter_tensors()
            .iter()
            .map(|t| t.name.clone())
            .filter(|n| n.starts_with("enc0.unit0.conv"))
            .collect();
        for name in names {
            let len = net.tensor_values(net.parameters(), &name).unwrap().len();
            net.set_tensor_values(&name, &vec![0.0; len]).unwrap();
        }
        let input = tiny_input(4, [1, 1, 4, 4, 4]);
        let cache = net.forward(&input).unwrap();

        // with the main path zeroed (norm of a constant-zero field is the
        // shift, which is zero), the unit output is exactly the projected skip
        let unit = &net.encoders[0][0];
        let projected = unit.skip.as_ref().unwrap().forward(net.parameters(), &input).unwrap();
        assert_eq!(cache.encoder_outs[0].data, projected.data);
    }

    #[test]
    fn gradient_flow_reaches_every_parameter_tensor() {
        let net = SegNet::new(NetworkConfig::default(), 11).unwrap();
        let input = tiny_input(5, [1, 1, 8, 8, 4]);
        let cache = net.forward(&input).unwrap();
        // arbitrary smooth scalar objective: mean of softmax class-1 output
        let probs = softmax_channels(&cache.logits);
        let voxels = 8 * 8 * 4;
        let mut dprobs = Tensor5::zeros(probs.dims);
        for v in 0..voxels {
            dprobs.data[voxels + v] = 1.0 / voxels as f64;
        }
        let grad_logits = crate::net::ops::softmax_channels_backward(&probs, &dprobs);
        let mut grads = vec![0.0; net.parameter_count()];
        let g_in = net.backward(&cache, &grad_logits, &mut grads).unwrap();
        assert!(g_in.all_finite());
        for t in net.parameter_tensors() {
            let slice = &grads[t.offset..t.offset + t.len];
            assert!(slice.iter().all(|v| v.is_finite()), "{} has non-finite grads", t.name);
            assert!(
                slice.iter().any(|&v| v != 0.0),
                "{} received no gradient",
                t.name
            );
        }
    }

    #[test]
    fn same_seed_same_network() {
        let a = SegNet::new(NetworkConfig::default(), 5).unwrap();
        let b = SegNet::new(NetworkConfig::default(), 5).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        let c = SegNet::new(NetworkConfig::default(), 6).unwrap();
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn set_tensor_values_rejects_unknown_and_misshaped() {
        let mut net = SegNet::new(NetworkConfig::default(), 1).unwrap();
        assert!(net.set_tensor_values("nonexistent", &[1.0]).is_err());
        assert!(net.set_tensor_values("head.bias", &[1.0]).is_err()); // needs 3
        net.set_tensor_values("head.bias", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(net.tensor_values(net.parameters(), "head.bias").unwrap(), &[1.0, 2.0, 3.0]);
    }
}
