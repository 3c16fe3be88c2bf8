//! Shared fixtures for the kernel benchmarks.

use denomamba::blocks::FuseSsmBlock;
use denomamba::data::make_dataset;
use denomamba::numerics::init::Initializer;
use denomamba::numerics::ParamBuilder;
use denomamba::ssm::{default_dt_rank, ScanOrigin};
use denomamba::{DenoMambaModel, ImagePair, ModelConfig, NoiseParams, ParamStore, ScanSequence, SsmLayerParams, Tensor};

/// A random sequence of `batch × length × channels` and layer parameters
/// grouping `group` channels per projection.
pub fn scan_case(batch: usize, length: usize, channels: usize, group: usize, state: usize, seed: u64) -> (ScanSequence, SsmLayerParams) {
    let mut init = Initializer::new(seed);
    let values = init.uniform(&[batch * length * channels], -1.0, 1.0).into_data();
    let seq = ScanSequence::new(batch, length, channels, values, ScanOrigin::RowMajor).expect("consistent sizes");
    let params = SsmLayerParams::init(group, state, default_dt_rank(group), &mut init);
    (seq, params)
}

/// Uniform random tensor in `[0, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    Initializer::new(seed).uniform(shape, 0.0, 1.0)
}

/// One fused block of the desk configuration at `width` channels.
pub fn desk_block(width: usize) -> (FuseSsmBlock, ParamStore) {
    let cfg = ModelConfig::desk().block_config(width);
    let mut b = ParamBuilder::new(1);
    let block = FuseSsmBlock::register(&mut b, "block", cfg).expect("valid desk block");
    (block, b.into_store())
}

pub fn desk_model() -> DenoMambaModel {
    DenoMambaModel::build(&ModelConfig::desk()).expect("desk preset builds")
}

/// A single simulated training pair at the default dose.
pub fn desk_pair(size: usize) -> ImagePair {
    make_dataset(1, size, &NoiseParams::default(), 0).expect("valid defaults").remove(0)
}
