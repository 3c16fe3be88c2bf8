use serde::{Deserialize, Serialize};

use crate::blocks::{Ablation, BlockConfig, BlockFlags};
use crate::error::{Error, Result};

/// Architecture of a [`DenoMambaModel`](crate::network::DenoMambaModel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of encoder/decoder stages `K`.
    pub stages: usize,
    /// Width `C` of the embedding and of the first stage.
    pub base_width: usize,
    pub enc_blocks: Vec<usize>,
    /// Decoder block counts, listed from the deepest stage to stage 1.
    pub dec_blocks: Vec<usize>,
    pub enc_widths: Vec<usize>,
    /// Decoder widths, listed from the deepest stage to stage 1.
    pub dec_widths: Vec<usize>,
    pub state_size: usize,
    pub conv_width: usize,
    pub expansion: usize,
    #[serde(default)]
    pub flags: BlockFlags,
    #[serde(default)]
    pub channel_bidirectional: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size configuration: four stages, widths 48–384.
    pub fn paper() -> Self {
        ModelConfig {
            stages: 4,
            base_width: 48,
            enc_blocks: vec![4, 6, 6, 8],
            dec_blocks: vec![6, 6, 4, 2],
            enc_widths: vec![48, 96, 192, 384],
            dec_widths: vec![192, 96, 48, 48],
            state_size: 16,
            conv_width: 4,
            expansion: 2,
            flags: BlockFlags::default(),
            channel_bidirectional: false,
            seed: 0,
        }
    }

    /// Small configuration that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        ModelConfig::scaled(3, 8, 1, 4)
    }

    /// `K` stages starting at width `C`, widths doubling per stage, `blocks`
    /// blocks everywhere, state size `N`.
    pub fn scaled(stages: usize, base_width: usize, blocks: usize, state_size: usize) -> Self {
        let enc_widths: Vec<usize> = (0..stages).map(|k| base_width << k).collect();
        ModelConfig {
            stages,
            base_width,
            enc_blocks: vec![blocks; stages],
            dec_blocks: vec![blocks; stages],
            dec_widths: mirrored_widths(&enc_widths),
            enc_widths,
            state_size,
            conv_width: 3,
            expansion: 2,
            flags: BlockFlags::default(),
            channel_bidirectional: false,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(ModelConfig::desk()),
            "paper" => Ok(ModelConfig::paper()),
            other => Err(Error::Usage(format!("unknown preset '{other}', expected 'desk' or 'paper'"))),
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.flags = self.flags.without(ablation);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.stages;
        if k == 0 {
            return Err(Error::Config("the model needs at least one stage".into()));
        }
        for (name, list) in [
            ("enc_blocks", &self.enc_blocks),
            ("dec_blocks", &self.dec_blocks),
            ("enc_widths", &self.enc_widths),
            ("dec_widths", &self.dec_widths),
        ] {
            if list.len() != k {
                return Err(Error::Config(format!("{name} has {} entries, expected one per stage ({k})", list.len())));
            }
            if list.contains(&0) {
                return Err(Error::Config(format!("{name} entries must be positive")));
            }
        }
        if self.enc_widths[0] != self.base_width {
            return Err(Error::Config(format!(
                "first encoder width {} differs from base width {}",
                self.enc_widths[0], self.base_width
            )));
        }
        let expected = mirrored_widths(&self.enc_widths);
        if self.dec_widths != expected {
            return Err(Error::Config(format!(
                "decoder widths {:?} do not mirror the encoder widths; skip connections need {:?}",
                self.dec_widths, expected
            )));
        }
        if self.state_size == 0 || self.conv_width == 0 || self.expansion == 0 {
            return Err(Error::Config("state size, conv width and expansion must be positive".into()));
        }
        self.flags.validate()
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.stages - 1)
    }

    pub fn check_extents(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if height == 0 || width == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "input extents {height}x{width} must be positive multiples of {d} for a {}-stage model",
                self.stages
            )));
        }
        Ok(())
    }

    pub fn block_config(&self, width: usize) -> BlockConfig {
        BlockConfig {
            width,
            expansion: self.expansion,
            state_size: self.state_size,
            conv_width: self.conv_width,
            flags: self.flags,
            channel_bidirectional: self.channel_bidirectional,
        }
    }

    /// Decoder width of stage `k` (1-based).
    pub fn dec_width(&self, k: usize) -> usize {
        self.dec_widths[self.stages - k]
    }

    /// Decoder block count of stage `k` (1-based).
    pub fn dec_block_count(&self, k: usize) -> usize {
        self.dec_blocks[self.stages - k]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Decoder widths implied by the encoder widths, deepest stage first: stage
/// `k ≥ 2` works at the width of encoder stage `k − 1`, stage 1 at `C`.
pub fn mirrored_widths(enc_widths: &[usize]) -> Vec<usize> {
    let k = enc_widths.len();
    let mut out: Vec<usize> = (2..=k).rev().map(|stage| enc_widths[stage - 2]).collect();
    if let Some(&c) = enc_widths.first() {
        out.push(c);
    }
    out
}

/// Shape of one stage's features for a given input size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub label: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    /// Feature shapes along the hourglass for an `height × width` input,
    /// computed without building the model.
    pub fn shape_plan(&self, height: usize, width: usize) -> Result<Vec<StageShape>> {
        self.validate()?;
        self.check_extents(height, width)?;
        let mut plan = Vec::new();
        let s = |label: String, channels, h, w| StageShape {
            label,
            channels,
            height: h,
            width: w,
        };
        plan.push(s("embed".into(), self.base_width, height, width));
        let (mut h, mut w) = (height, width);
        for k in 1..=self.stages {
            plan.push(s(format!("enc{k}"), self.enc_widths[k - 1], h, w));
            if k < self.stages {
                h /= 2;
                w /= 2;
                plan.push(s(format!("enc{k}.down"), self.enc_widths[k], h, w));
            }
        }
        for k in (1..=self.stages).rev() {
            if k > 1 {
                h *= 2;
                w *= 2;
                plan.push(s(format!("dec{k}.up"), self.dec_width(k), h, w));
            }
            plan.push(s(format!("dec{k}"), self.dec_width(k), h, w));
        }
        plan.push(s("output".into(), 1, h, w));
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::desk().enc_widths, vec![8, 16, 32]);
        assert_eq!(ModelConfig::desk().dec_widths, vec![16, 8, 8]);
    }

    #[test]
    fn mirrored_widths_reproduce_the_paper_lists() {
        assert_eq!(mirrored_widths(&[48, 96, 192, 384]), vec![192, 96, 48, 48]);
        assert_eq!(mirrored_widths(&[8]), vec![8]);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = ModelConfig::desk();
        c.enc_blocks = vec![1, 1];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::desk();
        c.dec_widths = vec![8, 8, 8];
        assert!(c.validate().is_err());
        let c = ModelConfig::desk()
            .with_ablation(Ablation::SpatialSsm)
            .with_ablation(Ablation::ChannelSsm);
        assert!(c.validate().is_err());
    }

    #[test]
    fn divisibility_error_names_the_divisor() {
        let err = ModelConfig::desk().check_extents(30, 32).unwrap_err();
        assert!(err.to_string().contains("multiples of 4"), "{err}");
    }

    #[test]
    fn paper_plan_at_256() {
        let plan = ModelConfig::paper().shape_plan(256, 256).unwrap();
        let find = |l: &str| plan.iter().find(|s| s.label == l).unwrap().clone();
        let e1 = find("enc1");
        assert_eq!((e1.channels, e1.height), (48, 256));
        let d1 = find("enc1.down");
        assert_eq!((d1.channels, d1.height), (96, 128));
        let up4 = find("dec4.up");
        assert_eq!((up4.channels, up4.height), (192, 64));
        assert_eq!(find("enc4").height, 32);
        assert_eq!(find("output").height, 256);
    }

    #[test]
    fn json_round_trip() {
        let c = ModelConfig::desk().with_ablation(Ablation::Gcn);
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
