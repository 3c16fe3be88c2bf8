//! Differentiable operations on tape variables, plus untaped forward kernels
//! for the heavier ones.

mod activation;
mod conv;
mod elementwise;
mod linear;
mod norm;

pub use activation::{logistic, relu, silu, silu_scalar, softplus};
pub use conv::{conv2d, conv2d_forward, conv_transpose2d, conv_transpose2d_forward, Conv2dSpec, Padding};
pub use elementwise::{add, concat_channels, mean, mean_abs_diff, mul, reshape, scale, slice_channels, sub, sum};
pub use linear::{linear, linear_forward};
pub use norm::{layer_norm, layer_norm_forward};
