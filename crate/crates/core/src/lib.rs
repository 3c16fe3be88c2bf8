//! DenoMamba: a fused spatial/channel state-space denoiser for low-dose CT.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{FeatureMap, ParamId, ParamStore, Tape, Tensor, Var};
pub use blocks::{Ablation, BlockFlags};
pub use data::{ImagePair, NoiseParams};
pub use metrics::MetricReport;
pub use network::{DenoMambaModel, ModelConfig};
pub use ssm::{ScanSequence, SsmLayerParams};
pub use training::{TrainConfig, Trainer};
