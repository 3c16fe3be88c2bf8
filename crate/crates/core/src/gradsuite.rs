//! Finite-difference verification of every differentiable component, from
//! single operators up to the whole desk-size network.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::layers::{down_conv, Conv, Linear, UpConv};
use crate::blocks::{BlockConfig, BlockFlags, Cfm, FuseSsmBlock, Gcn, ScanKind, SsmModule};
use crate::error::{Error, Result};
use crate::network::{DenoMambaModel, ModelConfig};
use crate::numerics::gradcheck::{check_input_gradients, check_param_gradients, GradCheckOptions, GradCheckReport};
use crate::numerics::ops::{self, Conv2dSpec};
use crate::numerics::{ParamBuilder, ParamStore, Tape, Tensor, Var};
use crate::ssm::{cross_merge, cross_scan, reverse_sequence, ssm_scan, ScanAlgo, SsmLayer};
use crate::training::l1_loss;

/// Default pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SuiteModule {
    /// Convolutions, linear maps, normalisation, activations, elementwise ops.
    Numerics,
    /// Selective scans and scan layouts.
    Ssm,
    Spatial,
    /// Channel SSM module followed by the gated convolution network.
    Channel,
    Cfm,
    Block,
    Network,
}

impl SuiteModule {
    pub const ALL: [SuiteModule; 7] = [
        SuiteModule::Numerics,
        SuiteModule::Ssm,
        SuiteModule::Spatial,
        SuiteModule::Channel,
        SuiteModule::Cfm,
        SuiteModule::Block,
        SuiteModule::Network,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuiteModule::Numerics => "numerics",
            SuiteModule::Ssm => "ssm",
            SuiteModule::Spatial => "spatial",
            SuiteModule::Channel => "channel",
            SuiteModule::Cfm => "cfm",
            SuiteModule::Block => "block",
            SuiteModule::Network => "network",
        }
    }
}

impl fmt::Display for SuiteModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuiteModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteModule::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = SuiteModule::ALL.iter().map(|m| m.as_str()).collect();
            Error::Usage(format!("unknown module '{s}', expected one of {}", names.join(", ")))
        })
    }
}

/// Suite settings. `fault` scales the SiLU backward to prove the checks bite.
#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub fault: Option<f64>,
    /// Coordinates sampled for the end-to-end network check.
    pub network_coords: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 7,
            fault: None,
            network_coords: 64,
        }
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("consistent shape")
}

/// Values bounded away from zero so kinks (ReLU, |·|) are never straddled.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// `Σ w ⊙ y` with fixed random weights: a scalar that exercises every output.
fn weighted_sum(tape: &Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&tape.shape(y), &mut rng));
    let p = ops::mul(tape, y, w)?;
    ops::sum(tape, p)
}

struct Ctx {
    opts: SuiteOptions,
    reports: Vec<(SuiteModule, GradCheckReport)>,
}

impl Ctx {
    fn inputs(
        &mut self,
        module: SuiteModule,
        label: &str,
        inputs: &[Tensor],
        f: impl Fn(&Tape, &[Var]) -> Result<Var>,
    ) -> Result<()> {
        let fault = self.opts.fault;
        let seed = self.opts.seed;
        let report = check_input_gradients(
            label,
            inputs,
            |tape, v| {
                if let Some(s) = fault {
                    tape.inject_gradient_fault(s);
                }
                let y = f(tape, v)?;
                weighted_sum(tape, y, seed ^ 0x5eed)
            },
            GradCheckOptions::default(),
        )?;
        self.reports.push((module, report));
        Ok(())
    }

    fn params(
        &mut self,
        module: SuiteModule,
        label: &str,
        store: &mut ParamStore,
        loss: impl Fn(&Tape, &ParamStore) -> Result<Var>,
        sample: Option<usize>,
    ) -> Result<()> {
        let opts = GradCheckOptions {
            sample,
            seed: self.opts.seed,
            ..GradCheckOptions::default()
        };
        let fault = self.opts.fault;
        let report = check_param_gradients(label, store, loss, opts, |t| {
            if let Some(s) = fault {
                t.inject_gradient_fault(s);
            }
        })?;
        self.reports.push((module, report));
        Ok(())
    }
}

/// Tiny block configuration: `C' = 2`, `α = 2`, `N = 2`.
pub fn tiny_block_config() -> BlockConfig {
    BlockConfig {
        width: 2,
        expansion: 2,
        state_size: 2,
        conv_width: 3,
        flags: BlockFlags::default(),
        channel_bidirectional: false,
    }
}

fn numerics(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let m = SuiteModule::Numerics;
    let x = random(&[2, 4, 5, 5], rng);
    let w = random(&[3, 4, 3, 3], rng);
    let b = random(&[3], rng);
    ctx.inputs(m, "conv2d", &[x.clone(), w, b], |t, v| {
        ops::conv2d(t, v[0], v[1], Some(v[2]), Conv2dSpec::new(1, 1, 1))
    })?;
    let w = random(&[4, 2, 3, 3], rng);
    ctx.inputs(m, "conv2d grouped stride 2", &[x.clone(), w], |t, v| {
        ops::conv2d(t, v[0], v[1], None, Conv2dSpec::new(2, 1, 2))
    })?;
    let w = random(&[4, 1, 4, 4], rng);
    ctx.inputs(m, "conv2d depthwise even kernel", &[x.clone(), w], |t, v| {
        ops::conv2d(t, v[0], v[1], None, Conv2dSpec::same(4, 4))
    })?;
    let xt = random(&[1, 4, 3, 3], rng);
    let w = random(&[4, 2, 3, 3], rng);
    let b = random(&[2], rng);
    ctx.inputs(m, "conv_transpose2d", &[xt, w, b], |t, v| {
        ops::conv_transpose2d(t, v[0], v[1], Some(v[2]), 2, 1, 1)
    })?;
    let w = random(&[3, 4], rng);
    let b = random(&[3], rng);
    ctx.inputs(m, "linear", &[x.clone(), w, b], |t, v| ops::linear(t, v[0], v[1], Some(v[2])))?;
    let g = random(&[4], rng);
    let b = random(&[4], rng);
    ctx.inputs(m, "layer_norm", &[x.clone(), g, b], |t, v| ops::layer_norm(t, v[0], v[1], v[2], 1e-5))?;
    ctx.inputs(m, "silu", std::slice::from_ref(&x), |t, v| ops::silu(t, v[0]))?;
    let xr = away_from_zero(&[1, 3, 4, 4], rng);
    ctx.inputs(m, "relu", &[xr], |t, v| ops::relu(t, v[0]))?;
    let a = random(&[1, 2, 3, 3], rng);
    let c = random(&[1, 3, 3, 3], rng);
    ctx.inputs(m, "concat/slice/mul/add", &[a, c], |t, v| {
        let cat = ops::concat_channels(t, &[v[0], v[1], v[0]])?;
        let s = ops::slice_channels(t, cat, 1, 4)?;
        let sq = ops::mul(t, s, s)?;
        let d = ops::sub(t, sq, s)?;
        ops::scale(t, ops::add(t, d, s)?, 0.5)
    })?;
    let pred = random(&[1, 1, 4, 4], rng);
    let gap = away_from_zero(&[1, 1, 4, 4], rng);
    let diff: Vec<f64> = pred.data().iter().zip(gap.data()).map(|(p, g)| p - g).collect();
    let target = Tensor::new(pred.shape(), diff)?;
    ctx.inputs(m, "l1 loss", &[pred, target], |t, v| {
        let l = l1_loss(t, v[0], v[1])?;
        ops::reshape(t, l, &[1])
    })?;
    Ok(())
}

fn ssm(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let m = SuiteModule::Ssm;
    for (label, s, f, n, len) in [("selective scan (grouped)", 3, 3, 2, 6), ("selective scan (per channel)", 1, 4, 3, 5)] {
        let mut b = ParamBuilder::new(rng.gen());
        let layer = SsmLayer::register(&mut b, "ssm", s, n);
        let mut store = b.into_store();
        // Perturb the defaults so step sizes are not all tiny.
        for id in [layer.dt_bias, layer.a_log] {
            for v in store.value_mut(id) {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let u = random(&[2, len, f], rng);
        for algo in [ScanAlgo::Sequential, ScanAlgo::Chunked { chunk: 2 }] {
            let layer = layer.clone();
            let u = u.clone();
            let seed = ctx.opts.seed;
            ctx.params(
                m,
                &format!("{label} params {algo:?}"),
                &mut store,
                move |t, st| {
                    let x = t.constant(u.clone());
                    let y = ssm_scan(t, x, layer.vars(t, st), algo)?;
                    weighted_sum(t, y, seed)
                },
                None,
            )?;
        }
        let p = layer.params(&store)?;
        let r = p.dt_rank;
        let inputs = [
            u,
            Tensor::new(&[s, n], p.a_log.clone())?,
            Tensor::new(&[r + 2 * n, s], p.x_proj.clone())?,
            Tensor::new(&[s, r], p.dt_proj.clone())?,
            Tensor::new(&[s], p.dt_bias.clone())?,
        ];
        ctx.inputs(m, &format!("{label} inputs"), &inputs, |t, v| {
            let vars = crate::ssm::SsmVars {
                a_log: v[1],
                x_proj: v[2],
                dt_proj: v[3],
                dt_bias: v[4],
            };
            ssm_scan(t, v[0], vars, ScanAlgo::default())
        })?;
    }
    let x = random(&[1, 2, 3, 2], rng);
    ctx.inputs(m, "cross scan/merge", &[x], |t, v| {
        let s = cross_scan(t, v[0])?;
        let sq = ops::mul(t, s, s)?;
        cross_merge(t, sq, 3, 2)
    })?;
    let x = random(&[2, 4, 3], rng);
    ctx.inputs(m, "reverse sequence", &[x], |t, v| {
        let r = reverse_sequence(t, v[0])?;
        ops::mul(t, r, v[0])
    })?;
    Ok(())
}

fn module_check(
    ctx: &mut Ctx,
    module: SuiteModule,
    label: &str,
    rng: &mut ChaCha8Rng,
    build: impl FnOnce(&mut ParamBuilder) -> Result<Box<dyn Fn(&Tape, &ParamStore, Var) -> Result<Var>>>,
    in_ch: usize,
) -> Result<()> {
    let mut b = ParamBuilder::new(rng.gen());
    let forward = build(&mut b)?;
    let mut store = b.into_store();
    // Random (non-zero) biases and norms so every parameter matters.
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let x = random(&[1, in_ch, 4, 4], rng);
    let forward = std::rc::Rc::new(forward);
    let f2 = forward.clone();
    let x2 = x.clone();
    let seed = ctx.opts.seed;
    ctx.params(
        module,
        &format!("{label} params"),
        &mut store,
        move |t, st| {
            let y = f2(t, st, t.constant(x2.clone()))?;
            weighted_sum(t, y, seed)
        },
        None,
    )?;
    let st = store.clone();
    ctx.inputs(module, &format!("{label} input"), &[x], move |t, v| forward(t, &st, v[0]))?;
    Ok(())
}

fn spatial(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = tiny_block_config();
    module_check(
        ctx,
        SuiteModule::Spatial,
        "spatial ssm",
        rng,
        |b| {
            let m = SsmModule::register(b, "spa", &cfg, ScanKind::Spatial);
            Ok(Box::new(move |t, s, x| m.forward(t, s, x)))
        },
        cfg.width,
    )
}

fn channel(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = tiny_block_config();
    for bidirectional in [false, true] {
        module_check(
            ctx,
            SuiteModule::Channel,
            if bidirectional { "channel ssm + gcn (bidirectional)" } else { "channel ssm + gcn" },
            rng,
            |b| {
                let m = SsmModule::register(b, "cha", &cfg, ScanKind::Channel { bidirectional });
                let g = Gcn::register(b, "gcn", cfg.width);
                Ok(Box::new(move |t, s, x| {
                    let tilde = m.forward(t, s, x)?;
                    g.forward(t, s, tilde)
                }))
            },
            cfg.width,
        )?;
    }
    Ok(())
}

fn cfm(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let w = 2;
    module_check(
        ctx,
        SuiteModule::Cfm,
        "cfm",
        rng,
        |b| {
            let c = Cfm::register(b, "cfm", 3 * w, w);
            Ok(Box::new(move |t, s, x| {
                let sq = ops::mul(t, x, x)?;
                let sh = ops::scale(t, x, -0.5)?;
                c.forward(t, s, &[x, sq, sh])
            }))
        },
        w,
    )
}

fn block(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = tiny_block_config();
    module_check(
        ctx,
        SuiteModule::Block,
        "fusessm block",
        rng,
        |b| {
            let blk = FuseSsmBlock::register(b, "block", cfg)?;
            Ok(Box::new(move |t, s, x| blk.forward(t, s, x)))
        },
        cfg.width,
    )?;
    module_check(
        ctx,
        SuiteModule::Block,
        "down/up sampling",
        rng,
        |b| {
            let d = down_conv(b, "down", 2, 4);
            let u = UpConv::register(b, "up", 4, 2);
            let l = Linear::register(b, "lin", 2, 2);
            let c = Conv::depthwise(b, "dw", 2, 3);
            Ok(Box::new(move |t, s, x| {
                let y = u.forward(t, s, d.forward(t, s, x)?)?;
                c.forward(t, s, l.forward(t, s, y)?)
            }))
        },
        2,
    )
}

fn network(ctx: &mut Ctx, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut cfg = ModelConfig::desk();
    cfg.seed = rng.gen();
    let mut model = DenoMambaModel::build(&cfg)?;
    let x = random(&[1, 1, 16, 16], rng).map(|v| 0.5 + 0.4 * v);
    let arch = model.clone();
    let seed = ctx.opts.seed;
    let loss = move |t: &Tape, st: &ParamStore| -> Result<Var> {
        let mut m = arch.clone();
        m.store = st.clone();
        let pred = m.forward_taped(t, t.constant(x.clone()))?;
        weighted_sum(t, pred, seed)
    };
    let coords = ctx.opts.network_coords;
    ctx.params(SuiteModule::Network, "desk network end-to-end", &mut model.store, loss, Some(coords))
}

/// Runs the selected checks; returns one report per check.
pub fn run_suite(modules: &[SuiteModule], opts: SuiteOptions) -> Result<Vec<(SuiteModule, GradCheckReport)>> {
    let mut ctx = Ctx {
        opts,
        reports: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for m in SuiteModule::ALL {
        if !modules.contains(&m) {
            continue;
        }
        match m {
            SuiteModule::Numerics => numerics(&mut ctx, &mut rng)?,
            SuiteModule::Ssm => ssm(&mut ctx, &mut rng)?,
            SuiteModule::Spatial => spatial(&mut ctx, &mut rng)?,
            SuiteModule::Channel => channel(&mut ctx, &mut rng)?,
            SuiteModule::Cfm => cfm(&mut ctx, &mut rng)?,
            SuiteModule::Block => block(&mut ctx, &mut rng)?,
            SuiteModule::Network => network(&mut ctx, &mut rng)?,
        }
    }
    Ok(ctx.reports)
}
