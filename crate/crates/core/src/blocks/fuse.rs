//! Gated convolution network, convolutional fusion and the full block.

use crate::blocks::layers::Conv;
use crate::blocks::modules::{ScanKind, SsmModule};
use crate::blocks::BlockConfig;
use crate::error::{Error, Result};
use crate::numerics::ops::{add, concat_channels, mul, relu};
use crate::numerics::{ParamBuilder, ParamStore, Tape, Var};

/// `z + conv_out(relu(dw_gate(t)) ⊙ dw_val(t))` with `t = conv_in(z)`.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub conv_in: Conv,
    pub dw_gate: Conv,
    pub dw_val: Conv,
    pub conv_out: Conv,
}

impl Gcn {
    pub fn register(b: &mut ParamBuilder, name: &str, width: usize) -> Self {
        Gcn {
            conv_in: Conv::same(b, &format!("{name}.conv_in"), width, width, 1),
            dw_gate: Conv::depthwise(b, &format!("{name}.dw_gate"), width, 3),
            dw_val: Conv::depthwise(b, &format!("{name}.dw_val"), width, 3),
            conv_out: Conv::same(b, &format!("{name}.conv_out"), width, width, 1),
        }
    }

    /// The non-negative gating map.
    pub fn gate(&self, tape: &Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let t = self.conv_in.forward(tape, store, z)?;
        relu(tape, self.dw_gate.forward(tape, store, t)?)
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let t = self.conv_in.forward(tape, store, z)?;
        let gate = relu(tape, self.dw_gate.forward(tape, store, t)?)?;
        let val = self.dw_val.forward(tape, store, t)?;
        let out = self.conv_out.forward(tape, store, mul(tape, gate, val)?)?;
        add(tape, z, out)
    }
}

/// `conv1x1(pool) + conv3x3(conv3x3(pool))` over the channel-concatenated maps.
#[derive(Clone, Debug)]
pub struct Cfm {
    pub pointwise: Conv,
    pub spatial_a: Conv,
    pub spatial_b: Conv,
}

impl Cfm {
    pub fn register(b: &mut ParamBuilder, name: &str, pooled: usize, width: usize) -> Self {
        Cfm {
            pointwise: Conv::same(b, &format!("{name}.pointwise"), pooled, width, 1),
            spatial_a: Conv::same(b, &format!("{name}.spatial_a"), pooled, width, 3),
            spatial_b: Conv::same(b, &format!("{name}.spatial_b"), width, width, 3),
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, maps: &[Var]) -> Result<Var> {
        let pool = concat_channels(tape, maps)?;
        let direct = self.pointwise.forward(tape, store, pool)?;
        let deep = self.spatial_a.forward(tape, store, pool)?;
        let deep = self.spatial_b.forward(tape, store, deep)?;
        add(tape, direct, deep)
    }
}

/// One FuseSSM block; disabled pathways are simply not built.
#[derive(Clone, Debug)]
pub struct FuseSsmBlock {
    pub config: BlockConfig,
    pub spatial: Option<SsmModule>,
    pub channel: Option<SsmModule>,
    pub gcn: Option<Gcn>,
    pub cfm: Option<Cfm>,
}

/// Intermediate maps of one block evaluation.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    pub spatial: Option<Var>,
    pub channel: Option<Var>,
    pub output: Var,
}

impl FuseSsmBlock {
    pub fn register(b: &mut ParamBuilder, name: &str, config: BlockConfig) -> Result<Self> {
        let flags = config.flags;
        flags.validate()?;
        if config.width == 0 || config.expansion == 0 || config.state_size == 0 || config.conv_width == 0 {
            return Err(Error::Config("block width, expansion, state size and conv width must be positive".into()));
        }
        let spatial = flags
            .spatial_ssm
            .then(|| SsmModule::register(b, &format!("{name}.spa"), &config, ScanKind::Spatial));
        let channel = flags.channel_ssm.then(|| {
            let kind = ScanKind::Channel {
                bidirectional: config.channel_bidirectional,
            };
            SsmModule::register(b, &format!("{name}.cha"), &config, kind)
        });
        let gcn = (flags.channel_ssm && flags.gcn).then(|| Gcn::register(b, &format!("{name}.gcn"), config.width));
        let cfm = flags
            .cfm
            .then(|| Cfm::register(b, &format!("{name}.cfm"), flags.pooled_paths() * config.width, config.width));
        Ok(FuseSsmBlock {
            config,
            spatial,
            channel,
            gcn,
            cfm,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, z: Var) -> Result<Var> {
        Ok(self.trace(tape, store, z)?.output)
    }

    pub fn trace(&self, tape: &Tape, store: &ParamStore, z: Var) -> Result<BlockTrace> {
        let shape = tape.shape(z);
        if shape.len() != 4 || shape[1] != self.config.width {
            return Err(Error::shape(
                "fusessm block",
                format!("(B, {}, H, W)", self.config.width),
                crate::numerics::shape_str(&shape),
            ));
        }
        let z_spa = self.spatial.as_ref().map(|m| m.forward(tape, store, z)).transpose()?;
        let z_cha = match &self.channel {
            Some(m) => {
                let tilde = m.forward(tape, store, z)?;
                Some(match &self.gcn {
                    Some(g) => g.forward(tape, store, tilde)?,
                    None => tilde,
                })
            }
            None => None,
        };
        let mut maps: Vec<Var> = z_spa.iter().chain(z_cha.iter()).copied().collect();
        if self.config.flags.identity {
            maps.push(z);
        }
        let output = match &self.cfm {
            Some(cfm) => cfm.forward(tape, store, &maps)?,
            None => {
                let mut acc = maps[0];
                for m in &maps[1..] {
                    acc = add(tape, acc, *m)?;
                }
                acc
            }
        };
        Ok(BlockTrace {
            spatial: z_spa,
            channel: z_cha,
            output,
        })
    }
}
