//! Minimal dense tensor arithmetic with reverse-mode automatic differentiation.

mod conv;
mod ops;
mod optim;
mod tensor;

pub use conv::{conv2d, Conv2dArgs};
pub use ops::{
    add, add_channel_bias, concat_channels, linear, mean, mean_square, mse_mean, mul, scale,
    scale_per_sample, silu, slice_channels, sub, upsample_nearest,
};
pub(crate) use ops::dims4;
pub use optim::{adam_step, OptimizerState};
pub use tensor::{grad_enabled, no_grad, NoGradGuard, Tensor};
