//! Spatial and channel SSM modules.
//!
//! Both share one structure:
//! `z + out_lin(silu(gate_lin(n)) ⊙ SSM(silu(dwconv(in_lin(n)))))` with
//! `n = layer_norm(z)`. They differ only in how the inner map is laid out as
//! sequences: a four-way 2-D cross scan with one group over all inner
//! channels, or a transpose that runs along the channel axis with one
//! independent scalar sequence per pixel.

use crate::blocks::layers::{Conv, LayerNorm, Linear};
use crate::blocks::BlockConfig;
use crate::error::Result;
use crate::numerics::ops::{add, mul, reshape, silu};
use crate::numerics::{ParamBuilder, ParamStore, Tape, Var};
use crate::ssm::{cross_merge, cross_scan, reverse_sequence, ScanAlgo, SsmLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanKind {
    Spatial,
    Channel { bidirectional: bool },
}

#[derive(Clone, Debug)]
pub struct SsmModule {
    pub kind: ScanKind,
    pub norm: LayerNorm,
    pub in_lin: Linear,
    pub gate_lin: Linear,
    pub dwconv: Conv,
    pub ssm: SsmLayer,
    pub out_lin: Linear,
    pub algo: ScanAlgo,
}

impl SsmModule {
    pub fn register(b: &mut ParamBuilder, name: &str, cfg: &BlockConfig, kind: ScanKind) -> Self {
        let (c, d) = (cfg.width, cfg.inner());
        let group = match kind {
            ScanKind::Spatial => d,
            ScanKind::Channel { .. } => 1,
        };
        SsmModule {
            kind,
            norm: LayerNorm::register(b, &format!("{name}.norm"), c),
            in_lin: Linear::register(b, &format!("{name}.in_lin"), c, d),
            gate_lin: Linear::register(b, &format!("{name}.gate_lin"), c, d),
            dwconv: Conv::depthwise(b, &format!("{name}.dwconv"), d, cfg.conv_width),
            ssm: SsmLayer::register(b, &format!("{name}.ssm"), group, cfg.state_size),
            out_lin: Linear::register(b, &format!("{name}.out_lin"), d, c),
            algo: ScanAlgo::default(),
        }
    }

    /// Gate `silu(gate_lin(n))` and the SSM input `silu(dwconv(in_lin(n)))`.
    pub fn branches(&self, tape: &Tape, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        let n = self.norm.forward(tape, store, z)?;
        let gate = silu(tape, self.gate_lin.forward(tape, store, n)?)?;
        let v = self.in_lin.forward(tape, store, n)?;
        let v = silu(tape, self.dwconv.forward(tape, store, v)?)?;
        Ok((gate, v))
    }

    /// Runs the state-space layer over the `(B, D, H, W)` inner map.
    pub fn mix(&self, tape: &Tape, store: &ParamStore, v: Var) -> Result<Var> {
        let shape = tape.shape(v);
        let (b, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        match self.kind {
            ScanKind::Spatial => {
                let seq = cross_scan(tape, v)?;
                let y = self.ssm.forward(tape, store, seq, self.algo)?;
                cross_merge(tape, y, h, w)
            }
            ScanKind::Channel { bidirectional } => {
                let seq = reshape(tape, v, &[b, d, h * w])?;
                let mut y = self.ssm.forward(tape, store, seq, self.algo)?;
                if bidirectional {
                    let rev = reverse_sequence(tape, seq)?;
                    let back = self.ssm.forward(tape, store, rev, self.algo)?;
                    y = add(tape, y, reverse_sequence(tape, back)?)?;
                }
                reshape(tape, y, &[b, d, h, w])
            }
        }
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let (gate, v) = self.branches(tape, store, z)?;
        let m = self.mix(tape, store, v)?;
        let gated = mul(tape, gate, m)?;
        let out = self.out_lin.forward(tape, store, gated)?;
        add(tape, z, out)
    }
}
