use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::{shape_str, Tensor};

/// Per-position normalisation statistics: normalised values and 1/sqrt(var + eps).
fn normalize(x: &[f64], dims: [usize; 4], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n * plane];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += x[base + ch * plane + p];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let d = x[base + ch * plane + p] - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[b * plane + p] = inv;
            for ch in 0..c {
                let i = base + ch * plane + p;
                xhat[i] = (x[i] - mean) * inv;
            }
        }
    }
    (xhat, inv_std)
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<[usize; 4]> {
    let dims = x.dims4()?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.numel() != dims[1] {
            return Err(Error::shape(
                if name == "gamma" { "layer_norm gamma" } else { "layer_norm beta" },
                format!("[{}]", dims[1]),
                shape_str(t.shape()),
            ));
        }
    }
    Ok(dims)
}

fn affine(xhat: &[f64], gamma: &[f64], beta: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut y = xhat.to_vec();
    for b in 0..n {
        for ch in 0..c {
            y[(b * c + ch) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v = *v * gamma[ch] + beta[ch]);
        }
    }
    y
}

/// Normalises across the channel axis at every spatial position, with a
/// zero-variance position mapping to `beta`.
pub fn layer_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let dims = check(x, gamma, beta, eps)?;
    let (xhat, _) = normalize(x.data(), dims, eps);
    Tensor::new(x.shape(), affine(&xhat, gamma.data(), beta.data(), dims))
}

pub fn layer_norm(tape: &Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    for v in [x, gamma, beta] {
        tape.check(v)?;
    }
    let xv = tape.value(x);
    let gv = tape.value(gamma);
    let bv = tape.value(beta);
    let dims = check(&xv, &gv, &bv, eps)?;
    let (xhat, inv_std) = normalize(xv.data(), dims, eps);
    let out = Tensor::new(xv.shape(), affine(&xhat, gv.data(), bv.data(), dims))?;
    Ok(tape.push(
        out,
        &[x, gamma, beta],
        Box::new(move |dy, sink| {
            let [n, c, h, w] = dims;
            let plane = h * w;
            let g = gv.data();
            if sink.wants(x) {
                sink.accumulate(x, |dx| {
                    for b in 0..n {
                        let base = b * c * plane;
                        for p in 0..plane {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for ch in 0..c {
                                let i = base + ch * plane + p;
                                let d = dy[i] * g[ch];
                                mean_d += d;
                                mean_dx += d * xhat[i];
                            }
                            mean_d /= c as f64;
                            mean_dx /= c as f64;
                            let inv = inv_std[b * plane + p];
                            for ch in 0..c {
                                let i = base + ch * plane + p;
                                dx[i] += inv * (dy[i] * g[ch] - mean_d - xhat[i] * mean_dx);
                            }
                        }
                    }
                });
            }
            sink.accumulate(gamma, |dg| {
                for b in 0..n {
                    for (ch, slot) in dg.iter_mut().enumerate() {
                        let off = (b * c + ch) * plane;
                        *slot += dy[off..off + plane]
                            .iter()
                            .zip(&xhat[off..off + plane])
                            .map(|(d, xh)| d * xh)
                            .sum::<f64>();
                    }
                }
            });
            sink.accumulate(beta, |db| {
                for b in 0..n {
                    for (ch, slot) in db.iter_mut().enumerate() {
                        *slot += dy[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
                    }
                }
            });
        }),
    ))
}
