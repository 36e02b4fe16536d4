//! Deterministic pseudo-random generation.
//!
//! Every randomized operation in this crate (patch sampling, dataset splits,
//! weight initialization, synthetic data) draws from [`SplitMix64`], a fixed
//! 64-bit generator with platform-independent output. The draw order of each
//! consumer is documented at its call site and is part of the reproducibility
//! contract: a given seed yields byte-identical results on every platform.

/// SplitMix64 generator (Steele, Lea & Flood; the `splitmix64` reference
/// constants). State advances by the golden-gamma increment and each output
/// is a finalized mix of the state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Output finalizer of SplitMix64. Also used on its own to derive
/// per-stream seeds.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream seed from a master seed and a stream
    /// index (e.g. a case index). Used when fanning work out across cases
    /// so each case samples from its own deterministic stream.
    pub fn derive_seed(master: u64, stream: u64) -> u64 {
        mix(master ^ mix(stream.wrapping_add(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform f64 in [0, 1): the high 53 bits of one `next_u64` draw.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [lo, hi).
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in [0, n). Unbiased via rejection: draws are discarded
    /// while they fall in the truncated tail of the 64-bit range. For any n
    /// that fits in memory the rejection probability is ~n/2^64, so this
    /// consumes one `next_u64` essentially always.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index requires n > 0");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal deviate via Box-Muller (two uniform draws per call).
    pub fn next_normal(&mut self) -> f64 {
        // u in (0,1] so ln is finite
        let u = 1.0 - self.next_f64();
        let v = self.next_f64();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
