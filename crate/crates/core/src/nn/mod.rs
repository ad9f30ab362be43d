//! Differentiable layers for the segmentation network.

mod conv;
mod norm;
mod pool;
mod regularize;
mod shape;

pub use conv::{conv2d, upconv2d, Conv2dParams};
pub use norm::{batchnorm, BatchNormParams, BatchStats};
pub use pool::maxpool2d;
pub use regularize::{dropout, gaussian_noise};
pub use shape::{concat_channels, crop, pad_reflect, slice_channels};

pub(crate) use norm::{batchnorm_eval, batchnorm_train};

/// Whether a layer runs with training behaviour (batch statistics, active
/// dropout and noise) or inference behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
