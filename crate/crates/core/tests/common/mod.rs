//! Naive loop-based reference implementations used as independent oracles.

#![allow(dead_code)]

use denomamba::blocks::BlockConfig;
use denomamba::ssm::{default_dt_rank, selective_scan_sequential, ScanOrigin, SsmLayerParams};
use denomamba::{ModelConfig, ParamStore, ScanSequence, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Adds uniform noise in `[-scale, scale]` to every parameter.
pub fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

/// Sets every parameter whose name ends with one of `suffixes` to zero.
pub fn zero_matching(store: &mut ParamStore, suffixes: &[&str]) {
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| suffixes.iter().any(|s| store.get(id).name().ends_with(s)))
        .collect();
    for id in ids {
        store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
    }
}

pub fn value(store: &ParamStore, name: &str) -> Tensor {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.value(id).clone()
}

/// Evaluates `f` on an inference tape.
pub fn eval(x: &Tensor, f: impl FnOnce(&Tape, Var) -> denomamba::Result<Var>) -> Tensor {
    let tape = Tape::inference();
    let v = tape.constant(x.clone());
    let y = f(&tape, v).unwrap();
    (*tape.value(y)).clone()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v / (1.0 + (-v).exp()))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()).unwrap()
}

/// Direct convolution; `pad` is applied before the image (top/left) and the
/// output extent is `(H + pad_total − k) / stride + 1`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize, pad_total: usize, groups: usize) -> Tensor {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (cout, cg, k) = (ws[0], ws[1], ws[2]);
    let oh = (h + pad_total - k) / stride + 1;
    let ow = (wd + pad_total - k) / stride + 1;
    let og = cout / groups;
    assert_eq!(cg * groups, cin);
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            let g = o / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[o]);
                    for ci in 0..cg {
                        let c = g * cg + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * cg + ci) * k + ky) * k + kx]
                                    * x.data()[((b * cin + c) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out).unwrap()
}

/// Odd-kernel "same" convolution with stride 1.
pub fn conv_same(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, groups: usize) -> Tensor {
    let k = w.shape()[2];
    assert_eq!(k % 2, 1);
    conv2d(x, w, bias, 1, k / 2, k - 1, groups)
}

/// Per-pixel `w · x + b` over the channel axis; `w` is `(out, in)`.
pub fn channel_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, cin, hw) = (s[0], s[1], s[2] * s[3]);
    let cout = w.shape()[0];
    let mut out = vec![0.0; n * cout * hw];
    for bi in 0..n {
        for o in 0..cout {
            for p in 0..hw {
                let mut acc = b.data()[o];
                for i in 0..cin {
                    acc += w.data()[o * cin + i] * x.data()[(bi * cin + i) * hw + p];
                }
                out[(bi * cout + o) * hw + p] = acc;
            }
        }
    }
    Tensor::new(&[n, cout, s[2], s[3]], out).unwrap()
}

/// Layer normalisation over channels at every pixel.
pub fn channel_layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; x.numel()];
    for b in 0..n {
        for p in 0..hw {
            let vals: Vec<f64> = (0..c).map(|i| x.data()[(b * c + i) * hw + p]).collect();
            let mean = vals.iter().sum::<f64>() / c as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            for i in 0..c {
                out[(b * c + i) * hw + p] = (vals[i] - mean) / (var + eps).sqrt() * gamma.data()[i] + beta.data()[i];
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

pub fn concat(maps: &[&Tensor]) -> Tensor {
    let s = maps[0].shape();
    let (n, hw) = (s[0], s[2] * s[3]);
    let total: usize = maps.iter().map(|m| m.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for m in maps {
            let c = m.shape()[1];
            out.extend_from_slice(&m.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Tensor::new(&[n, total, s[2], s[3]], out).unwrap()
}

/// Four directional traversals of every image, each scanned independently by
/// the reference recurrence, mapped back and summed.
pub fn cross_ssm(v: &Tensor, params: &SsmLayerParams) -> Tensor {
    let s = v.shape();
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    let row: Vec<usize> = (0..h * w).collect();
    let col: Vec<usize> = (0..w).flat_map(|j| (0..h).map(move |i| i * w + j)).collect();
    let orders = [row.clone(), col.clone(), row.into_iter().rev().collect(), col.into_iter().rev().collect()];
    let mut out = vec![0.0; v.numel()];
    for b in 0..n {
        for order in &orders {
            let mut vals = Vec::with_capacity(h * w * d);
            for &p in order {
                for c in 0..d {
                    vals.push(v.data()[(b * d + c) * h * w + p]);
                }
            }
            let seq = ScanSequence::new(1, h * w, d, vals, ScanOrigin::Raw).unwrap();
            let y = selective_scan_sequential(&seq, params).unwrap();
            for (t, &p) in order.iter().enumerate() {
                for c in 0..d {
                    out[(b * d + c) * h * w + p] += y.values[t * d + c];
                }
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

/// Channels as the sequence axis: one scalar stream per pixel.
pub fn channel_ssm(v: &Tensor, params: &SsmLayerParams, bidirectional: bool) -> Tensor {
    let s = v.shape();
    let (n, d, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; v.numel()];
    for b in 0..n {
        for p in 0..hw {
            let stream: Vec<f64> = (0..d).map(|c| v.data()[(b * d + c) * hw + p]).collect();
            let run = |vals: Vec<f64>| {
                let seq = ScanSequence::new(1, d, 1, vals, ScanOrigin::Raw).unwrap();
                selective_scan_sequential(&seq, params).unwrap().values
            };
            let fwd = run(stream.clone());
            for c in 0..d {
                out[(b * d + c) * hw + p] += fwd[c];
            }
            if bidirectional {
                let bwd = run(stream.into_iter().rev().collect());
                for c in 0..d {
                    out[(b * d + c) * hw + p] += bwd[d - 1 - c];
                }
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

/// Reference SSM module: `z + out_lin(silu(gate_lin(n)) ⊙ mix(silu(dw(in_lin(n)))))`.
pub fn ssm_module(z: &Tensor, store: &ParamStore, prefix: &str, params: &SsmLayerParams, spatial: bool, bidirectional: bool) -> Tensor {
    let p = |s: &str| value(store, &format!("{prefix}.{s}"));
    let n = channel_layer_norm(z, &p("norm.gamma"), &p("norm.beta"), 1e-5);
    let gate = silu(&channel_linear(&n, &p("gate_lin.weight"), &p("gate_lin.bias")));
    let inner = channel_linear(&n, &p("in_lin.weight"), &p("in_lin.bias"));
    let d = inner.shape()[1];
    let v = silu(&conv_same(&inner, &p("dwconv.weight"), Some(&p("dwconv.bias")), d));
    let m = if spatial { cross_ssm(&v, params) } else { channel_ssm(&v, params, bidirectional) };
    let gated = zip(&gate, &m, |a, b| a * b);
    let out = channel_linear(&gated, &p("out_lin.weight"), &p("out_lin.bias"));
    zip(z, &out, |a, b| a + b)
}

/// Reference gated convolution network.
pub fn gcn(z: &Tensor, store: &ParamStore, prefix: &str) -> Tensor {
    let p = |s: &str| value(store, &format!("{prefix}.{s}"));
    let c = z.shape()[1];
    let t = conv_same(z, &p("conv_in.weight"), Some(&p("conv_in.bias")), 1);
    let gate = relu(&conv_same(&t, &p("dw_gate.weight"), Some(&p("dw_gate.bias")), c));
    let val = conv_same(&t, &p("dw_val.weight"), Some(&p("dw_val.bias")), c);
    let out = conv_same(&zip(&gate, &val, |a, b| a * b), &p("conv_out.weight"), Some(&p("conv_out.bias")), 1);
    zip(z, &out, |a, b| a + b)
}

/// Reference convolutional fusion module.
pub fn cfm(maps: &[&Tensor], store: &ParamStore, prefix: &str) -> Tensor {
    let p = |s: &str| value(store, &format!("{prefix}.{s}"));
    let pool = concat(maps);
    let direct = conv_same(&pool, &p("pointwise.weight"), Some(&p("pointwise.bias")), 1);
    let a = conv_same(&pool, &p("spatial_a.weight"), Some(&p("spatial_a.bias")), 1);
    let deep = conv_same(&a, &p("spatial_b.weight"), Some(&p("spatial_b.bias")), 1);
    zip(&direct, &deep, |x, y| x + y)
}

fn module_tally(cfg: &BlockConfig, group: usize) -> usize {
    let (c, d, n) = (cfg.width, cfg.width * cfg.expansion, cfg.state_size);
    let r = default_dt_rank(group);
    let k = cfg.conv_width;
    let norm = 2 * c;
    let in_and_gate = 2 * (d * c + d);
    let dw = d * k * k + d;
    let ssm = group * n + (r + 2 * n) * group + group * r + group;
    let out = c * d + c;
    norm + in_and_gate + dw + ssm + out
}

/// Independent tally of one block's learnable scalars from layer shapes.
pub fn block_tally(cfg: &BlockConfig) -> usize {
    let f = cfg.flags;
    let c = cfg.width;
    let mut total = 0;
    if f.spatial_ssm {
        total += module_tally(cfg, c * cfg.expansion);
    }
    if f.channel_ssm {
        total += module_tally(cfg, 1);
        if f.gcn {
            total += 2 * (c * c + c) + 2 * (9 * c + c);
        }
    }
    if f.cfm {
        let pooled = (f.spatial_ssm as usize + f.channel_ssm as usize + f.identity as usize) * c;
        total += (pooled * c + c) + (pooled * c * 9 + c) + (c * c * 9 + c);
    }
    total
}

/// Independent tally of a whole model's learnable scalars.
pub fn model_tally(cfg: &ModelConfig) -> usize {
    let k_max = cfg.stages;
    let block = |width: usize| {
        block_tally(&BlockConfig {
            width,
            expansion: cfg.expansion,
            state_size: cfg.state_size,
            conv_width: cfg.conv_width,
            flags: cfg.flags,
            channel_bidirectional: cfg.channel_bidirectional,
        })
    };
    let conv3 = |cin: usize, cout: usize| cin * cout * 9 + cout;
    // Decoder lists run deepest stage first.
    let dec_w = |k: usize| cfg.dec_widths[k_max - k];
    let dec_n = |k: usize| cfg.dec_blocks[k_max - k];
    let mut total = conv3(1, cfg.base_width);
    for k in 1..=k_max {
        let w = cfg.enc_widths[k - 1];
        total += cfg.enc_blocks[k - 1] * block(w);
        if k < k_max {
            total += conv3(w, cfg.enc_widths[k]);
        }
    }
    for k in (1..=k_max).rev() {
        if k > 1 {
            let from = if k == k_max { cfg.enc_widths[k_max - 1] } else { dec_w(k + 1) };
            total += conv3(from, dec_w(k));
        }
        total += dec_n(k) * block(dec_w(k));
    }
    total + conv3(dec_w(1), 1)
}
