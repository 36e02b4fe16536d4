//! Dense 5-D tensors for the network's data path.
//!
//! Layout is `(batch, channels, x, y, z)` with z fastest, matching the
//! access pattern of the convolution kernels. All arithmetic is f64: the
//! network is small enough that precision is cheaper than the risk of
//! gradient checks drowning in rounding noise.

use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("dims {dims:?} need {expected} values, got {got}")]
    DataLengthMismatch {
        dims: [usize; 5],
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 5], right: [usize; 5] },
}

/// `(batch, channels, x, y, z)` tensor backed by one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5 {
    pub dims: [usize; 5],
    pub data: Vec<f64>,
}

impl Tensor5 {
    pub fn zeros(dims: [usize; 5]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLengthMismatch {
                dims,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    /// Uniform values in `(-scale, scale)`.
    pub fn random_uniform(dims: [usize; 5], scale: f64, rng: &mut SplitMix64) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| (2.0 * rng.next_f64() - 1.0) * scale).collect();
        Self { dims, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Spatial extents `(x, y, z)`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(
            b < self.dims[0]
                && c < self.dims[1]
                && x < self.dims[2]
                && y < self.dims[3]
                && z < self.dims[4]
        );
        (((b * self.dims[1] + c) * self.dims[2] + x) * self.dims[3] + y) * self.dims[4] + z
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(b, c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(b, c, x, y, z);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Tensor5) -> Result<(), TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis; spatial dims and batch must
    /// agree.
    pub fn concat_channels(a: &Tensor5, b: &Tensor5) -> Result<Tensor5, TensorError> {
        if a.dims[0] != b.dims[0] || a.spatial() != b.spatial() {
            return Err(TensorError::ShapeMismatch {
                left: a.dims,
                right: b.dims,
            });
        }
        let dims = [a.dims[0], a.dims[1] + b.dims[1], a.dims[2], a.dims[3], a.dims[4]];
        let voxels = a.dims[2] * a.dims[3] * a.dims[4];
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..a.dims[0] {
            let a_start = n * a.dims[1] * voxels;
            data.extend_from_slice(&a.data[a_start..a_start + a.dims[1] * voxels]);
            let b_start = n * b.dims[1] * voxels;
            data.extend_from_slice(&b.data[b_start..b_start + b.dims[1] * voxels]);
        }
        Ok(Tensor5 { dims, data })
    }

    /// Undo [`Tensor5::concat_channels`] on a gradient: route the slices
    /// back to the two inputs.
    pub fn split_channels(grad: &Tensor5, a_channels: usize) -> (Tensor5, Tensor5) {
        let b_channels = grad.dims[1] - a_channels;
        let voxels = grad.dims[2] * grad.dims[3] * grad.dims[4];
        let a_dims = [grad.dims[0], a_channels, grad.dims[2], grad.dims[3], grad.dims[4]];
        let b_dims = [grad.dims[0], b_channels, grad.dims[2], grad.dims[3], grad.dims[4]];
        let mut a = Vec::with_capacity(a_dims.iter().product());
        let mut b = Vec::with_capacity(b_dims.iter().product());
        for n in 0..grad.dims[0] {
            let base = n * grad.dims[1] * voxels;
            a.extend_from_slice(&grad.data[base..base + a_channels * voxels]);
            b.extend_from_slice(
                &grad.data[base + a_channels * voxels..base + grad.dims[1] * voxels],
            );
        }
        (
            Tensor5 { dims: a_dims, data: a },
            Tensor5 { dims: b_dims, data: b },
        )
    }
}
