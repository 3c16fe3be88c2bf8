//! Dense `f64` tensors with tape-based reverse-mode differentiation.

pub mod gradcheck;
pub mod init;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use params::{Param, ParamBuilder, ParamId, ParamSpec, ParamStore};
pub use tape::{GradSink, Gradients, Tape, Var};
pub use tensor::{FeatureMap, Tensor};
pub(crate) use tensor::shape_str;
