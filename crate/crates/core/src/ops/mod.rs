//! Forward and backward kernels for every layer type the networks use.
//!
//! These are plain functions on [`Tensor`](crate::tensor::Tensor)s; the
//! autodiff tape in [`crate::autodiff`] wires them together.

mod activation;
mod conv;
mod pool;
mod shape;

pub use activation::{prelu, prelu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads, Padding};
pub use pool::{maxpool2, maxpool2_backward, upsample2_backward, upsample2_nearest, Pooled};
pub use shape::{concat_channels, split_channels};
