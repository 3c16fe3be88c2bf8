//! Parameterised building blocks: convolutions, channel-wise linear maps and
//! layer normalisation, each holding handles into a [`ParamStore`].

use crate::error::Result;
use crate::numerics::ops::{conv2d, conv_transpose2d, layer_norm, linear, Conv2dSpec, Padding};
use crate::numerics::{ParamBuilder, ParamId, ParamStore, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv {
    /// Dense or grouped `k×k` convolution with explicit stride and padding.
    pub fn register(
        b: &mut ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let per_group = in_ch / spec.groups;
        let fan_in = per_group * kernel * kernel;
        Conv {
            weight: b.fan_in(format!("{name}.weight"), &[out_ch, per_group, kernel, kernel], fan_in),
            bias: b.constant(format!("{name}.bias"), &[out_ch], 0.0),
            spec,
        }
    }

    /// Stride-1 convolution keeping the spatial extents.
    pub fn same(b: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Conv::register(b, name, in_ch, out_ch, kernel, Conv2dSpec::same(kernel, 1))
    }

    /// Depth-wise stride-1 convolution keeping the spatial extents.
    pub fn depthwise(b: &mut ParamBuilder, name: &str, channels: usize, kernel: usize) -> Self {
        Conv::register(b, name, channels, channels, kernel, Conv2dSpec::same(kernel, channels))
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let bias = tape.param(store, self.bias);
        conv2d(tape, x, w, Some(bias), self.spec)
    }
}

/// Stride-2 transposed `3×3` convolution doubling the spatial extents.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl UpConv {
    pub fn register(b: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize) -> Self {
        UpConv {
            weight: b.fan_in(format!("{name}.weight"), &[in_ch, out_ch, 3, 3], in_ch * 9),
            bias: b.constant(format!("{name}.bias"), &[out_ch], 0.0),
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let bias = tape.param(store, self.bias);
        conv_transpose2d(tape, x, w, Some(bias), 2, 1, 1)
    }
}

/// Stride-2 `3×3` convolution halving the spatial extents.
pub fn down_conv(b: &mut ParamBuilder, name: &str, in_ch: usize, out_ch: usize) -> Conv {
    let spec = Conv2dSpec {
        stride: 2,
        padding: Padding::uniform(1),
        groups: 1,
    };
    Conv::register(b, name, in_ch, out_ch, 3, spec)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register(b: &mut ParamBuilder, name: &str, in_f: usize, out_f: usize) -> Self {
        Linear {
            weight: b.fan_in(format!("{name}.weight"), &[out_f, in_f], in_f),
            bias: b.constant(format!("{name}.bias"), &[out_f], 0.0),
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let bias = tape.param(store, self.bias);
        linear(tape, x, w, Some(bias))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn register(b: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        LayerNorm {
            gamma: b.constant(format!("{name}.gamma"), &[channels], 1.0),
            beta: b.constant(format!("{name}.beta"), &[channels], 0.0),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        layer_norm(tape, x, g, b, self.eps)
    }
}
