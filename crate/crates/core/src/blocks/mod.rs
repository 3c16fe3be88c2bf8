//! The FuseSSM block and its pathways.
//!
//! A block sends its input through a spatial SSM module, a channel SSM module
//! followed by a gated convolution network, and an identity path, then fuses
//! the three maps with a convolutional fusion module (CFM). Each pathway can be
//! switched off through [`BlockFlags`] for ablation studies.

mod fuse;
pub mod layers;
mod modules;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fuse::{BlockTrace, Cfm, FuseSsmBlock, Gcn};
pub use modules::{ScanKind, SsmModule};

/// Which pathways of a FuseSSM block are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockFlags {
    pub spatial_ssm: bool,
    pub channel_ssm: bool,
    pub gcn: bool,
    pub cfm: bool,
    pub identity: bool,
}

impl Default for BlockFlags {
    fn default() -> Self {
        BlockFlags {
            spatial_ssm: true,
            channel_ssm: true,
            gcn: true,
            cfm: true,
            identity: true,
        }
    }
}

impl BlockFlags {
    pub fn validate(&self) -> Result<()> {
        if !self.spatial_ssm && !self.channel_ssm {
            return Err(Error::Config(
                "at least one of the spatial and channel SSM pathways must stay enabled".into(),
            ));
        }
        Ok(())
    }

    pub fn without(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::SpatialSsm => self.spatial_ssm = false,
            Ablation::ChannelSsm => self.channel_ssm = false,
            Ablation::Gcn => self.gcn = false,
            Ablation::Cfm => self.cfm = false,
            Ablation::Identity => self.identity = false,
        }
        self
    }

    /// Number of maps entering the fusion stage.
    pub fn pooled_paths(&self) -> usize {
        usize::from(self.spatial_ssm) + usize::from(self.channel_ssm) + usize::from(self.identity)
    }
}

/// A single removed pathway.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    SpatialSsm,
    ChannelSsm,
    Cfm,
    Gcn,
    Identity,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::SpatialSsm,
        Ablation::ChannelSsm,
        Ablation::Cfm,
        Ablation::Gcn,
        Ablation::Identity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::SpatialSsm => "no-spa-ssm",
            Ablation::ChannelSsm => "no-cha-ssm",
            Ablation::Cfm => "no-cfm",
            Ablation::Gcn => "no-gcn",
            Ablation::Identity => "no-iden",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.as_str()).collect();
                Error::Usage(format!("unknown ablation '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// Hyperparameters shared by every block of a stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    /// Channel width `C'`.
    pub width: usize,
    /// Inner expansion factor `α`.
    pub expansion: usize,
    pub state_size: usize,
    /// Kernel of the depth-wise convolution inside the SSM modules.
    pub conv_width: usize,
    pub flags: BlockFlags,
    /// Also scan the channel axis in reverse and sum both directions.
    pub channel_bidirectional: bool,
}

impl BlockConfig {
    pub fn inner(&self) -> usize {
        self.width * self.expansion
    }
}
