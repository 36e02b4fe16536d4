//! A miniature differentiable 3D segmentation network.
//!
//! Everything is built from first principles on `f64` tensors: explicit
//! forward/backward convolution, PReLU, instance normalization, softmax,
//! soft Dice loss, Adam, and a reduce-on-plateau schedule, assembled into
//! a residual encoder–decoder ([`model::SegNet`]) with concatenation
//! skips. Every primitive's backward pass is held to central
//! finite-difference checks, so the training loop can be trusted end to
//! end without any external autograd.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
