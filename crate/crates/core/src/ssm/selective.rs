//! Input-dependent (selective) diagonal state-space layer.
//!
//! For a sequence `u` of shape `(batch, length, F)` the `F` features are split
//! into `G = F / S` groups of `S` channels. Inside a group, each step's input
//! row is projected to a low-rank step-size code, an input vector `B` and a
//! readout vector `C` (both of size `N`). Every channel then runs its own
//! recurrence
//!
//! ```text
//!   Δ      = softplus(W_dt · code + b_dt)          (per channel)
//!   Ā      = exp(Δ · A),  A = −exp(a_log)          (zero-order hold)
//!   B̄      = Δ · B                                 (Euler)
//!   h[n]   = Ā ⊙ h[n−1] + B̄ · u[n],   h[0] = 0
//!   ū[n]   = <C, h[n]>
//! ```
//!
//! Spatial scans use a single group spanning all channels. Channel scans use
//! one-channel groups so the parameters do not depend on the image size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::init::Initializer;
use crate::numerics::ops::{logistic, softplus};
use crate::numerics::{shape_str, ParamBuilder, ParamId, ParamStore, Tape, Tensor, Var};
use crate::ssm::layout::ScanSequence;
use crate::ssm::recurrence::{scan_chunked, scan_sequential, DEFAULT_CHUNK};

/// Recurrence evaluation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanAlgo {
    Sequential,
    Chunked { chunk: usize },
}

impl Default for ScanAlgo {
    fn default() -> Self {
        ScanAlgo::Chunked { chunk: DEFAULT_CHUNK }
    }
}

/// Discretises one channel: `Ā = exp(Δ·A)` with `A = −exp(a_log)`, `B̄ = Δ·b`.
pub fn discretize(a_log: &[f64], delta: f64, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta > 0.0) {
        return Err(Error::Usage(format!("discretize needs a positive step size, got {delta}")));
    }
    let a_bar = a_log.iter().map(|&al| (-al.exp() * delta).exp()).collect();
    let b_bar = b.iter().map(|&bv| delta * bv).collect();
    Ok((a_bar, b_bar))
}

/// Default low-rank width of the step-size projection.
pub fn default_dt_rank(channels: usize) -> usize {
    channels.div_ceil(16).max(1)
}

/// `A = −(n + 1)` for state index `n`.
fn a_log_init(channels: usize, state_size: usize) -> Tensor {
    let data = (0..channels * state_size).map(|i| ((i % state_size + 1) as f64).ln()).collect();
    Tensor::new(&[channels, state_size], data).expect("consistent shape")
}

/// Bias placing the initial step size log-uniformly in `[1e-3, 1e-1]`.
fn dt_bias_init(channels: usize, init: &mut Initializer) -> Tensor {
    let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
    init.uniform(&[channels], 0.0, 1.0).map(|r| {
        let dt = (lo + r * (hi - lo)).exp();
        // inverse softplus
        dt + (-(-dt).exp_m1()).ln()
    })
}

/// Values of one selective SSM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmLayerParams {
    /// Channels per projection group (`S`).
    pub channels: usize,
    /// State size `N`.
    pub state_size: usize,
    /// Rank `R` of the step-size projection.
    pub dt_rank: usize,
    /// `[S, N]`
    pub a_log: Vec<f64>,
    /// `[R + 2N, S]`
    pub x_proj: Vec<f64>,
    /// `[S, R]`
    pub dt_proj: Vec<f64>,
    /// `[S]`
    pub dt_bias: Vec<f64>,
}

impl SsmLayerParams {
    pub fn zeros(channels: usize, state_size: usize, dt_rank: usize) -> Self {
        SsmLayerParams {
            channels,
            state_size,
            dt_rank,
            a_log: vec![0.0; channels * state_size],
            x_proj: vec![0.0; (dt_rank + 2 * state_size) * channels],
            dt_proj: vec![0.0; channels * dt_rank],
            dt_bias: vec![0.0; channels],
        }
    }

    /// Initial values: `A = −(n+1)` per state index, small random projections
    /// and a step-size bias placing Δ log-uniformly in `[1e-3, 1e-1]`.
    pub fn init(channels: usize, state_size: usize, dt_rank: usize, init: &mut Initializer) -> Self {
        SsmLayerParams {
            channels,
            state_size,
            dt_rank,
            a_log: a_log_init(channels, state_size).into_data(),
            x_proj: init.fan_in_uniform(&[dt_rank + 2 * state_size, channels], channels).into_data(),
            dt_proj: init.fan_in_uniform(&[channels, dt_rank], dt_rank).into_data(),
            dt_bias: dt_bias_init(channels, init).into_data(),
        }
    }

    pub fn from_tensors(a_log: &Tensor, x_proj: &Tensor, dt_proj: &Tensor, dt_bias: &Tensor) -> Result<Self> {
        let dims = SsmDims::from_shapes(a_log.shape(), x_proj.shape(), dt_proj.shape(), dt_bias.shape())?;
        Ok(SsmLayerParams {
            channels: dims.chans,
            state_size: dims.state,
            dt_rank: dims.rank,
            a_log: a_log.data().to_vec(),
            x_proj: x_proj.data().to_vec(),
            dt_proj: dt_proj.data().to_vec(),
            dt_bias: dt_bias.data().to_vec(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (s, n, r) = (self.channels, self.state_size, self.dt_rank);
        if s == 0 || n == 0 || r == 0 {
            return Err(Error::Config("SSM channels, state size and rank must be positive".into()));
        }
        let checks = [
            ("a_log", self.a_log.len(), s * n),
            ("x_proj", self.x_proj.len(), (r + 2 * n) * s),
            ("dt_proj", self.dt_proj.len(), s * r),
            ("dt_bias", self.dt_bias.len(), s),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape("ssm params", format!("{name} with {want} values"), format!("{got}")));
            }
        }
        Ok(())
    }

    fn view(&self) -> ParamView<'_> {
        ParamView {
            x_proj: &self.x_proj,
            dt_proj: &self.dt_proj,
            dt_bias: &self.dt_bias,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct SsmDims {
    batch: usize,
    len: usize,
    feats: usize,
    chans: usize,
    groups: usize,
    state: usize,
    rank: usize,
}

impl SsmDims {
    fn from_shapes(a_log: &[usize], x_proj: &[usize], dt_proj: &[usize], dt_bias: &[usize]) -> Result<Self> {
        let (s, n) = match a_log {
            [s, n] => (*s, *n),
            _ => return Err(Error::shape("ssm a_log", "[S, N]", shape_str(a_log))),
        };
        let r = match dt_proj {
            [s2, r] if *s2 == s => *r,
            _ => return Err(Error::shape("ssm dt_proj", format!("[{s}, R]"), shape_str(dt_proj))),
        };
        if x_proj != [r + 2 * n, s] {
            return Err(Error::shape("ssm x_proj", format!("[{}, {s}]", r + 2 * n), shape_str(x_proj)));
        }
        if dt_bias != [s] {
            return Err(Error::shape("ssm dt_bias", format!("[{s}]"), shape_str(dt_bias)));
        }
        Ok(SsmDims {
            batch: 0,
            len: 0,
            feats: 0,
            chans: s,
            groups: 0,
            state: n,
            rank: r,
        })
    }

    fn with_sequence(mut self, batch: usize, len: usize, feats: usize) -> Result<Self> {
        if !feats.is_multiple_of(self.chans) {
            return Err(Error::shape(
                "selective scan",
                format!("feature count divisible by {}", self.chans),
                format!("{feats}"),
            ));
        }
        self.batch = batch;
        self.len = len;
        self.feats = feats;
        self.groups = feats / self.chans;
        Ok(self)
    }

    fn code(&self) -> usize {
        self.rank + 2 * self.state
    }

    fn streams(&self) -> usize {
        self.batch * self.feats
    }
}

#[derive(Clone, Copy)]
struct ParamView<'a> {
    x_proj: &'a [f64],
    dt_proj: &'a [f64],
    dt_bias: &'a [f64],
}

/// Per-step projections shared by forward and backward.
struct Projection {
    /// `[B, L, G, R + 2N]`: step code, B, C.
    code: Vec<f64>,
    /// `[B, L, F]` pre-softplus step size.
    pre: Vec<f64>,
    /// `[B, L, F]`
    delta: Vec<f64>,
}

fn project(u: &[f64], p: ParamView<'_>, d: &SsmDims) -> Projection {
    let (s_n, k, r) = (d.chans, d.code(), d.rank);
    let rows = d.batch * d.len;
    let mut code = vec![0.0; rows * d.groups * k];
    let mut pre = vec![0.0; rows * d.feats];
    for row in 0..rows {
        for g in 0..d.groups {
            let urow = &u[row * d.feats + g * s_n..][..s_n];
            let crow = &mut code[(row * d.groups + g) * k..][..k];
            for (j, slot) in crow.iter_mut().enumerate() {
                let w = &p.x_proj[j * s_n..][..s_n];
                *slot = w.iter().zip(urow).map(|(a, b)| a * b).sum();
            }
            let prow = &mut pre[row * d.feats + g * s_n..][..s_n];
            for (s, slot) in prow.iter_mut().enumerate() {
                let w = &p.dt_proj[s * r..][..r];
                *slot = p.dt_bias[s] + w.iter().zip(&crow[..r]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    let delta = pre.iter().map(|&v| softplus(v)).collect();
    Projection { code, pre, delta }
}

/// Continuous-time decay `A = −exp(a_log)`.
fn decay_rates(a_log: &[f64]) -> Vec<f64> {
    a_log.iter().map(|v| -v.exp()).collect()
}

/// Fills `[L, N]` coefficient buffers of stream `(b, f)`.
fn stream_coefficients(
    u: &[f64],
    proj: &Projection,
    a_rate: &[f64],
    d: &SsmDims,
    stream: usize,
    a_buf: &mut [f64],
    x_buf: &mut [f64],
    c_buf: &mut [f64],
) {
    let (b, f) = (stream / d.feats, stream % d.feats);
    let (s, g) = (f % d.chans, f / d.chans);
    let (n_st, k, r) = (d.state, d.code(), d.rank);
    for l in 0..d.len {
        let idx = (b * d.len + l) * d.feats + f;
        let delta = proj.delta[idx];
        let du = delta * u[idx];
        let code = &proj.code[((b * d.len + l) * d.groups + g) * k..][..k];
        for n in 0..n_st {
            a_buf[l * n_st + n] = (delta * a_rate[s * n_st + n]).exp();
            x_buf[l * n_st + n] = du * code[r + n];
            c_buf[l * n_st + n] = code[r + n_st + n];
        }
    }
}

/// Runs every stream; returns outputs `[B, L, F]` and, when asked, all states
/// stream-major `[B·F, L, N]`.
fn scan_streams(u: &[f64], proj: &Projection, a_rate: &[f64], d: &SsmDims, algo: ScanAlgo, keep_states: bool) -> (Vec<f64>, Option<Vec<f64>>) {
    let span = d.len * d.state;
    let run = |stream: usize, states: Option<&mut [f64]>| -> Vec<f64> {
        let mut a_buf = vec![0.0; span];
        let mut x_buf = vec![0.0; span];
        let mut c_buf = vec![0.0; span];
        stream_coefficients(u, proj, a_rate, d, stream, &mut a_buf, &mut x_buf, &mut c_buf);
        match algo {
            ScanAlgo::Sequential => scan_sequential(&a_buf, &x_buf, &c_buf, d.state, states),
            ScanAlgo::Chunked { chunk } => scan_chunked(&a_buf, &x_buf, &c_buf, d.state, chunk, states),
        }
    };
    let (outputs, states): (Vec<Vec<f64>>, Option<Vec<f64>>) = if keep_states {
        let mut states = vec![0.0; d.streams() * span];
        let outs = states
            .par_chunks_mut(span)
            .enumerate()
            .map(|(st, buf)| run(st, Some(buf)))
            .collect();
        (outs, Some(states))
    } else {
        let outs = (0..d.streams()).into_par_iter().map(|st| run(st, None)).collect();
        (outs, None)
    };
    let mut y = vec![0.0; d.batch * d.len * d.feats];
    for (stream, ys) in outputs.iter().enumerate() {
        let (b, f) = (stream / d.feats, stream % d.feats);
        for (l, v) in ys.iter().enumerate() {
            y[(b * d.len + l) * d.feats + f] = *v;
        }
    }
    (y, states)
}

fn run_layer(seq: &ScanSequence, params: &SsmLayerParams, algo: ScanAlgo) -> Result<ScanSequence> {
    params.validate()?;
    let d = SsmDims {
        batch: 0,
        len: 0,
        feats: 0,
        chans: params.channels,
        groups: 0,
        state: params.state_size,
        rank: params.dt_rank,
    }
    .with_sequence(seq.batch, seq.length, seq.channels)?;
    let proj = project(&seq.values, params.view(), &d);
    let a_rate = decay_rates(&params.a_log);
    let (y, _) = scan_streams(&seq.values, &proj, &a_rate, &d, algo, false);
    ScanSequence::new(seq.batch, seq.length, seq.channels, y, seq.origin)
}

/// Unrolled step-by-step recurrence (the correctness reference).
pub fn selective_scan_sequential(seq: &ScanSequence, params: &SsmLayerParams) -> Result<ScanSequence> {
    run_layer(seq, params, ScanAlgo::Sequential)
}

/// Chunked recurrence, parallel over independent streams.
pub fn selective_scan(seq: &ScanSequence, params: &SsmLayerParams) -> Result<ScanSequence> {
    run_layer(seq, params, ScanAlgo::default())
}

pub fn selective_scan_with(seq: &ScanSequence, params: &SsmLayerParams, algo: ScanAlgo) -> Result<ScanSequence> {
    run_layer(seq, params, algo)
}

/// Tape variables holding one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct SsmVars {
    pub a_log: Var,
    pub x_proj: Var,
    pub dt_proj: Var,
    pub dt_bias: Var,
}

/// Per-stream gradient pieces, reduced in stream order afterwards.
struct StreamGrad {
    du: Vec<f64>,
    ddelta: Vec<f64>,
    da: Vec<f64>,
    db: Vec<f64>,
    dc: Vec<f64>,
}

fn stream_backward(
    u: &[f64],
    proj: &Projection,
    a_rate: &[f64],
    d: &SsmDims,
    stream: usize,
    states: &[f64],
    dy: &[f64],
) -> StreamGrad {
    let (b, f) = (stream / d.feats, stream % d.feats);
    let (s, g) = (f % d.chans, f / d.chans);
    let (n_st, k, r) = (d.state, d.code(), d.rank);
    let mut out = StreamGrad {
        du: vec![0.0; d.len],
        ddelta: vec![0.0; d.len],
        da: vec![0.0; n_st],
        db: vec![0.0; d.len * n_st],
        dc: vec![0.0; d.len * n_st],
    };
    let mut gh = vec![0.0; n_st];
    for l in (0..d.len).rev() {
        let idx = (b * d.len + l) * d.feats + f;
        let delta = proj.delta[idx];
        let uu = u[idx];
        let code = &proj.code[((b * d.len + l) * d.groups + g) * k..][..k];
        let dyl = dy[idx];
        let h = &states[l * n_st..][..n_st];
        let mut du = 0.0;
        let mut ddelta = 0.0;
        for n in 0..n_st {
            let bn = code[r + n];
            let cn = code[r + n_st + n];
            let rate = a_rate[s * n_st + n];
            let a = (delta * rate).exp();
            gh[n] += dyl * cn;
            out.dc[l * n_st + n] = dyl * h[n];
            let h_prev = if l > 0 { states[(l - 1) * n_st + n] } else { 0.0 };
            let da_bar = gh[n] * h_prev;
            ddelta += da_bar * a * rate + gh[n] * bn * uu;
            out.da[n] += da_bar * a * delta;
            out.db[l * n_st + n] = gh[n] * delta * uu;
            du += gh[n] * delta * bn;
            gh[n] *= a;
        }
        out.du[l] = du;
        out.ddelta[l] = ddelta;
    }
    out
}

/// Selective scan of `(B, L, F)` sequences recorded on the tape.
pub fn ssm_scan(tape: &Tape, u: Var, vars: SsmVars, algo: ScanAlgo) -> Result<Var> {
    for v in [u, vars.a_log, vars.x_proj, vars.dt_proj, vars.dt_bias] {
        tape.check(v)?;
    }
    let uv = tape.value(u);
    let a_log = tape.value(vars.a_log);
    let x_proj = tape.value(vars.x_proj);
    let dt_proj = tape.value(vars.dt_proj);
    let dt_bias = tape.value(vars.dt_bias);
    let [batch, len, feats] = uv.dims3()?;
    let d = SsmDims::from_shapes(a_log.shape(), x_proj.shape(), dt_proj.shape(), dt_bias.shape())?
        .with_sequence(batch, len, feats)?;
    let view = ParamView {
        x_proj: x_proj.data(),
        dt_proj: dt_proj.data(),
        dt_bias: dt_bias.data(),
    };
    let proj = project(uv.data(), view, &d);
    let a_rate = decay_rates(a_log.data());
    let (y, states) = scan_streams(uv.data(), &proj, &a_rate, &d, algo, tape.grad_enabled());
    let out = Tensor::new(&[batch, len, feats], y)?;
    let inputs = [u, vars.a_log, vars.x_proj, vars.dt_proj, vars.dt_bias];
    Ok(tape.push(
        out,
        &inputs,
        Box::new(move |dy, sink| {
            let states = states.as_ref().expect("states are kept when gradients are enabled");
            let span = d.len * d.state;
            let uvals = uv.data();
            let pieces: Vec<StreamGrad> = (0..d.streams())
                .into_par_iter()
                .map(|st| stream_backward(uvals, &proj, &a_rate, &d, st, &states[st * span..][..span], dy))
                .collect();

            let (n_st, k, r, s_n) = (d.state, d.code(), d.rank, d.chans);
            let mut du = vec![0.0; uvals.len()];
            let mut dpre = vec![0.0; uvals.len()];
            let mut da_rate = vec![0.0; s_n * n_st];
            let mut dcode = vec![0.0; proj.code.len()];
            for (stream, p) in pieces.iter().enumerate() {
                let (b, f) = (stream / d.feats, stream % d.feats);
                let (s, g) = (f % s_n, f / s_n);
                for l in 0..d.len {
                    let idx = (b * d.len + l) * d.feats + f;
                    du[idx] += p.du[l];
                    dpre[idx] = p.ddelta[l] * logistic(proj.pre[idx]);
                    let crow = &mut dcode[((b * d.len + l) * d.groups + g) * k..][..k];
                    for n in 0..n_st {
                        crow[r + n] += p.db[l * n_st + n];
                        crow[r + n_st + n] += p.dc[l * n_st + n];
                    }
                }
                for n in 0..n_st {
                    da_rate[s * n_st + n] += p.da[n];
                }
            }

            // Step-size projection: pre = dt_proj · code[..R] + dt_bias.
            let dt_w = dt_proj.data();
            let mut d_dt_w = vec![0.0; s_n * r];
            let mut d_dt_b = vec![0.0; s_n];
            let rows = d.batch * d.len;
            for row in 0..rows {
                for g in 0..d.groups {
                    let cbase = (row * d.groups + g) * k;
                    for s in 0..s_n {
                        let gp = dpre[row * d.feats + g * s_n + s];
                        if gp == 0.0 {
                            continue;
                        }
                        d_dt_b[s] += gp;
                        for j in 0..r {
                            d_dt_w[s * r + j] += gp * proj.code[cbase + j];
                            dcode[cbase + j] += gp * dt_w[s * r + j];
                        }
                    }
                }
            }

            // Input projection: code = x_proj · u_group.
            let xw = x_proj.data();
            let mut d_xw = vec![0.0; xw.len()];
            for row in 0..rows {
                for g in 0..d.groups {
                    let ubase = row * d.feats + g * s_n;
                    let crow = &dcode[(row * d.groups + g) * k..][..k];
                    for (j, &gc) in crow.iter().enumerate() {
                        if gc == 0.0 {
                            continue;
                        }
                        for s in 0..s_n {
                            d_xw[j * s_n + s] += gc * uvals[ubase + s];
                            du[ubase + s] += gc * xw[j * s_n + s];
                        }
                    }
                }
            }

            sink.add(u, &du);
            sink.add(vars.dt_proj, &d_dt_w);
            sink.add(vars.dt_bias, &d_dt_b);
            sink.add(vars.x_proj, &d_xw);
            // A = −exp(a_log) ⇒ dA/da_log = A.
            let d_alog: Vec<f64> = da_rate.iter().zip(&a_rate).map(|(g, a)| g * a).collect();
            sink.add(vars.a_log, &d_alog);
        }),
    ))
}

/// Store-backed selective SSM layer.
#[derive(Clone, Debug)]
pub struct SsmLayer {
    pub a_log: ParamId,
    pub x_proj: ParamId,
    pub dt_proj: ParamId,
    pub dt_bias: ParamId,
}

impl SsmLayer {
    pub fn register(builder: &mut ParamBuilder, prefix: &str, channels: usize, state_size: usize) -> Self {
        let rank = default_dt_rank(channels);
        SsmLayer {
            a_log: builder.with(format!("{prefix}.a_log"), &[channels, state_size], |_| a_log_init(channels, state_size)),
            x_proj: builder.fan_in(format!("{prefix}.x_proj"), &[rank + 2 * state_size, channels], channels),
            dt_proj: builder.fan_in(format!("{prefix}.dt_proj"), &[channels, rank], rank),
            dt_bias: builder.with(format!("{prefix}.dt_bias"), &[channels], |init| dt_bias_init(channels, init)),
        }
    }

    pub fn vars(&self, tape: &Tape, store: &ParamStore) -> SsmVars {
        SsmVars {
            a_log: tape.param(store, self.a_log),
            x_proj: tape.param(store, self.x_proj),
            dt_proj: tape.param(store, self.dt_proj),
            dt_bias: tape.param(store, self.dt_bias),
        }
    }

    pub fn params(&self, store: &ParamStore) -> Result<SsmLayerParams> {
        SsmLayerParams::from_tensors(
            store.value(self.a_log),
            store.value(self.x_proj),
            store.value(self.dt_proj),
            store.value(self.dt_bias),
        )
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, u: Var, algo: ScanAlgo) -> Result<Var> {
        ssm_scan(tape, u, self.vars(tape, store), algo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_input_gradients, GradCheckOptions};
    use crate::ssm::layout::ScanOrigin;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(s: usize, n: usize, seed: u64) -> SsmLayerParams {
        let mut init = Initializer::new(seed);
        let mut p = SsmLayerParams::init(s, n, default_dt_rank(s), &mut init);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for v in p.a_log.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
        for v in p.dt_bias.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        p
    }

    fn random_seq(b: usize, l: usize, f: usize, seed: u64) -> ScanSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..b * l * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScanSequence::new(b, l, f, v, ScanOrigin::Raw).unwrap()
    }

    /// Literal step-by-step evaluation, one channel at a time.
    fn unrolled(seq: &ScanSequence, p: &SsmLayerParams) -> Vec<f64> {
        let (s_n, n_st, r) = (p.channels, p.state_size, p.dt_rank);
        let mut out = vec![0.0; seq.values.len()];
        for b in 0..seq.batch {
            for f in 0..seq.channels {
                let (g, s) = (f / s_n, f % s_n);
                let mut h = vec![0.0; n_st];
                for l in 0..seq.length {
                    let group: Vec<f64> = (0..s_n).map(|j| seq.at(b, l, g * s_n + j)).collect();
                    let row = |j: usize| -> f64 { (0..s_n).map(|i| p.x_proj[j * s_n + i] * group[i]).sum() };
                    let code: Vec<f64> = (0..r).map(row).collect();
                    let bvec: Vec<f64> = (0..n_st).map(|n| row(r + n)).collect();
                    let cvec: Vec<f64> = (0..n_st).map(|n| row(r + n_st + n)).collect();
                    let pre = p.dt_bias[s] + (0..r).map(|j| p.dt_proj[s * r + j] * code[j]).sum::<f64>();
                    let delta = (1.0 + pre.exp()).ln();
                    let (a_bar, b_bar) = discretize(&p.a_log[s * n_st..(s + 1) * n_st], delta, &bvec).unwrap();
                    let x = seq.at(b, l, f);
                    let mut y = 0.0;
                    for n in 0..n_st {
                        h[n] = a_bar[n] * h[n] + b_bar[n] * x;
                        y += cvec[n] * h[n];
                    }
                    out[(b * seq.length + l) * seq.channels + f] = y;
                }
            }
        }
        out
    }

    #[test]
    fn discretize_reference_values() {
        let (a, b) = discretize(&[0.0], std::f64::consts::LN_2, &[1.0]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15);
        assert!((b[0] - std::f64::consts::LN_2).abs() < 1e-15);
        let (_, b) = discretize(&[0.3], 0.25, &[1.0]).unwrap();
        assert_eq!(b[0], 0.25);
        let (a, b) = discretize(&[0.7], 1e-12, &[2.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-11 && b[0].abs() < 1e-11);
        assert!(discretize(&[0.0], 0.0, &[1.0]).is_err());
        assert!(discretize(&[0.0], -1.0, &[1.0]).is_err());
    }

    #[test]
    fn sequential_matches_unrolled_recurrence() {
        for (s, f) in [(4, 4), (1, 6), (2, 6)] {
            let p = random_params(s, 3, 11);
            let seq = random_seq(2, 8, f, 5);
            let got = selective_scan_sequential(&seq, &p).unwrap();
            let want = unrolled(&seq, &p);
            for (a, b) in got.values.iter().zip(&want) {
                assert!((a - b).abs() < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_step_and_zero_input() {
        let p = random_params(3, 4, 2);
        let seq = random_seq(1, 1, 3, 9);
        let y = selective_scan(&seq, &p).unwrap();
        for (a, b) in y.values.iter().zip(unrolled(&seq, &p)) {
            assert!((a - b).abs() < 1e-14);
        }
        let zero = ScanSequence::zeros(1, 16, 3);
        assert!(selective_scan(&zero, &p).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_count_must_divide_into_groups() {
        let p = random_params(4, 2, 1);
        let seq = random_seq(1, 3, 6, 1);
        assert!(matches!(selective_scan(&seq, &p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn long_sequences_stay_bounded() {
        let p = random_params(2, 4, 3);
        let seq = random_seq(1, 1024, 4, 4);
        let y = selective_scan(&seq, &p).unwrap();
        assert!(y.values.iter().all(|v| v.is_finite() && v.abs() < 1e6));
        let reference = selective_scan_sequential(&seq, &p).unwrap();
        for (a, b) in y.values.iter().zip(&reference.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn taped_scan_matches_value_level_scan() {
        let p = random_params(2, 3, 8);
        let seq = random_seq(2, 5, 4, 8);
        let tape = Tape::new();
        let t = |shape: &[usize], v: &Vec<f64>| tape.leaf(Tensor::new(shape, v.clone()).unwrap());
        let vars = SsmVars {
            a_log: t(&[2, 3], &p.a_log),
            x_proj: t(&[p.dt_rank + 6, 2], &p.x_proj),
            dt_proj: t(&[2, p.dt_rank], &p.dt_proj),
            dt_bias: t(&[2], &p.dt_bias),
        };
        let u = tape.leaf(seq.to_tensor());
        let y = ssm_scan(&tape, u, vars, ScanAlgo::Chunked { chunk: 2 }).unwrap();
        let want = selective_scan_sequential(&seq, &p).unwrap();
        assert!(tape.value(y).data().iter().zip(&want.values).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    fn gradcheck_case(s: usize, f: usize, n: usize, len: usize, seed: u64) {
        let p = random_params(s, n, seed);
        let seq = random_seq(2, len, f, seed + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let weights: Vec<f64> = (0..2 * len * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = p.dt_rank;
        let inputs = vec![
            seq.to_tensor(),
            Tensor::new(&[s, n], p.a_log.clone()).unwrap(),
            Tensor::new(&[r + 2 * n, s], p.x_proj.clone()).unwrap(),
            Tensor::new(&[s, r], p.dt_proj.clone()).unwrap(),
            Tensor::new(&[s], p.dt_bias.clone()).unwrap(),
        ];
        let w = Tensor::new(&[2, len, f], weights).unwrap();
        for algo in [ScanAlgo::Sequential, ScanAlgo::Chunked { chunk: 2 }] {
            let report = check_input_gradients(
                "ssm",
                &inputs,
                |tape, v| {
                    let vars = SsmVars { a_log: v[1], x_proj: v[2], dt_proj: v[3], dt_bias: v[4] };
                    let y = ssm_scan(tape, v[0], vars, algo)?;
                    let wv = tape.constant(w.clone());
                    let prod = crate::numerics::ops::mul(tape, y, wv)?;
                    crate::numerics::ops::sum(tape, prod)
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "{report:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_grouped() {
        gradcheck_case(3, 3, 2, 6, 21);
    }

    #[test]
    fn gradients_match_finite_differences_scalar_groups() {
        gradcheck_case(1, 4, 3, 5, 31);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn chunked_equals_sequential(
            len in 1usize..64, chans in 1usize..8, state in 1usize..8,
            grouped in any::<bool>(), chunk in 1usize..20, seed in 0u64..1000,
        ) {
            let s = if grouped { chans } else { 1 };
            let p = random_params(s, state, seed);
            let seq = random_seq(1, len, chans, seed + 7);
            let a = selective_scan_sequential(&seq, &p).unwrap();
            let b = selective_scan_with(&seq, &p, ScanAlgo::Chunked { chunk }).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
